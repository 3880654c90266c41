//! Timestamped base poses.

use nalgebra::{Matrix6, Vector3, Vector6};

use super::SimError;
use crate::geometry::{Pose, Rotation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub time: f64,
    /// Base to inertial (NED); the covariance is the per-step odometry noise.
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Self, SimError> {
        for w in poses.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(SimError::Config(format!(
                    "timestamps must increase: {} then {}",
                    w[0].time, w[1].time
                )));
            }
        }
        if poses.iter().any(|p| !p.time.is_finite()) {
            return Err(SimError::Config("non-finite timestamp".into()));
        }
        Ok(Self { poses })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Straight line along +x at a constant up-positive `elevation`, heading
    /// north, from `start_x` to `end_x` inclusive in near-`step` increments.
    pub fn transect(
        start_x: f64,
        end_x: f64,
        y: f64,
        elevation: f64,
        step: f64,
        dt: f64,
        step_covariance: Matrix6<f64>,
    ) -> Result<Self, SimError> {
        if !(step > 0.0 && dt > 0.0) {
            return Err(SimError::Config("transect step and dt must be positive".into()));
        }
        let n = ((end_x - start_x).abs() / step).round() as usize;
        let mut poses = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let x = if n == 0 {
                start_x
            } else {
                start_x + (end_x - start_x) * i as f64 / n as f64
            };
            let pose = Pose::new(Vector3::new(x, y, -elevation), Rotation::identity(), step_covariance)?;
            poses.push(TimedPose { time: i as f64 * dt, pose });
        }
        Self::new(poses)
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Diagonal per-step covariance from translation (m) and rotation (rad)
/// standard deviations.
pub fn step_covariance(translation_sigma: f64, rotation_sigma: f64) -> Matrix6<f64> {
    let t = translation_sigma * translation_sigma;
    let r = rotation_sigma * rotation_sigma;
    Matrix6::from_diagonal(&Vector6::new(t, t, t, r, r, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transect_endpoints() {
        let t = Trajectory::transect(0.0, 12.0, 0.0, 1.0, 0.05, 0.1, Matrix6::zeros()).unwrap();
        assert_eq!(t.len(), 241);
        assert_eq!(t.poses()[0].pose.translation(), &Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(t.poses()[240].pose.translation().x, 12.0);
        assert!(t.poses().windows(2).all(|w| w[1].time > w[0].time));
    }

    #[test]
    fn rejects_unordered_times() {
        let p = TimedPose {
            time: 1.0,
            pose: Pose::identity(),
        };
        assert!(Trajectory::new(vec![p, p]).is_err());
        assert!(Trajectory::new(vec![]).unwrap().is_empty());
    }
}
