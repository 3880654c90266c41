//! Coordinate frames, rigid transforms and the Jacobians used for height
//! variance propagation.
//!
//! Frame conventions:
//!
//! * The inertial frame is NED (x north, y east, z down).
//! * The map frame shares the inertial axis directions and translates with
//!   the robot. Transforms into the map frame therefore produce NED-style
//!   vectors; elevation is stored up-positive, `h = -z`. That sign flip lives
//!   in [`height_measurement`] and nowhere else.
//! * The camera (sensor) frame is x right, y down, z along the optical axis.
//! * Euler angles are intrinsic Z-Y'-X'' (yaw, then pitch, then roll), so the
//!   matrix is `Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! * Pose covariances are 6x6, ordered `[tx, ty, tz, roll, pitch, yaw]`.

use nalgebra::{Matrix3, Matrix4, Matrix6, RowVector3, Vector3};
use thiserror::Error;

/// Central finite-difference step (radians) for [`jacobian_rotation`].
pub const ROTATION_FD_STEP: f64 = 1e-6;

const GIMBAL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("pitch {pitch} rad is at gimbal lock (|pitch| = pi/2)")]
    GimbalLock { pitch: f64 },
    #[error("non-finite pose component")]
    NonFinite,
    #[error("pose covariance is not symmetric positive semi-definite (min eigenvalue {min_eigenvalue})")]
    BadCovariance { min_eigenvalue: f64 },
}

/// Euler-angle rotation (yaw-pitch-roll) with its matrix cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    yaw: f64,
    pitch: f64,
    roll: f64,
    matrix: Matrix3<f64>,
}

impl Rotation {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            yaw,
            pitch,
            roll,
            matrix: euler_matrix(yaw, pitch, roll),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Recovers yaw-pitch-roll angles from a rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let sin_pitch = (-m[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sin_pitch.asin();
        if pitch.cos() < GIMBAL_EPS {
            return Err(GeometryError::GimbalLock { pitch });
        }
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        Ok(Self::new(yaw, pitch, roll))
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn roll(&self) -> f64 {
        self.roll
    }

    /// Angles in covariance order `[roll, pitch, yaw]`.
    pub fn angles(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn from_angles(angles: [f64; 3]) -> Self {
        Self::new(angles[2], angles[1], angles[0])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn is_gimbal_locked(&self) -> bool {
        self.pitch.cos().abs() < GIMBAL_EPS
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * v
    }
}

fn euler_matrix(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Rigid transform with a 6x6 covariance (`[tx, ty, tz, roll, pitch, yaw]`).
///
/// A pose maps points from its child frame into its parent frame:
/// `p_parent = R * p_child + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    translation: Vector3<f64>,
    rotation: Rotation,
    covariance: Matrix6<f64>,
}

impl Pose {
    pub fn new(
        translation: Vector3<f64>,
        rotation: Rotation,
        covariance: Matrix6<f64>,
    ) -> Result<Self, GeometryError> {
        if !translation.iter().all(|v| v.is_finite())
            || !rotation.angles().iter().all(|v| v.is_finite())
            || !covariance.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        if rotation.is_gimbal_locked() {
            return Err(GeometryError::GimbalLock {
                pitch: rotation.pitch(),
            });
        }
        let asym = (covariance - covariance.transpose()).abs().max();
        let min_eigenvalue = if asym > 1e-12 {
            f64::NEG_INFINITY
        } else {
            covariance.symmetric_eigenvalues().min()
        };
        if min_eigenvalue < -1e-10 {
            return Err(GeometryError::BadCovariance { min_eigenvalue });
        }
        Ok(Self {
            translation,
            rotation,
            covariance,
        })
    }

    /// Pose without uncertainty.
    pub fn exact(translation: Vector3<f64>, rotation: Rotation) -> Result<Self, GeometryError> {
        Self::new(translation, rotation, Matrix6::zeros())
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Rotation::identity(),
            covariance: Matrix6::zeros(),
        }
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn translation_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Lower-right 3x3 block, ordered `[roll, pitch, yaw]`.
    pub fn rotation_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn with_covariance(self, covariance: Matrix6<f64>) -> Result<Self, GeometryError> {
        Self::new(self.translation, self.rotation, covariance)
    }

    pub fn with_rotation(self, rotation: Rotation) -> Result<Self, GeometryError> {
        Self::new(self.translation, rotation, self.covariance)
    }

    /// Homogeneous 4x4 matrix of the mean transform.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self * other`: first apply `other`, then `self`.
    ///
    /// Covariance is first order with independent inputs: translation blocks
    /// add with `other`'s rotated into the parent frame, rotation blocks add.
    /// Lever-arm coupling between rotation noise and translation is dropped.
    pub fn compose(&self, other: &Pose) -> Result<Pose, GeometryError> {
        let r = self.rotation.matrix();
        let rotation = Rotation::from_matrix(&(r * other.rotation.matrix()))?;
        let translation = r * other.translation + self.translation;
        let mut covariance = self.covariance;
        let t_other = r * other.translation_covariance() * r.transpose();
        let mut tblock = covariance.fixed_view_mut::<3, 3>(0, 0);
        tblock += t_other;
        let mut rblock = covariance.fixed_view_mut::<3, 3>(3, 3);
        rblock += other.rotation_covariance();
        Pose::new(translation, rotation, covariance)
    }

    /// Inverse transform. Covariance is carried over unchanged.
    pub fn inverse(&self) -> Result<Pose, GeometryError> {
        let rt = self.rotation.matrix().transpose();
        let rotation = Rotation::from_matrix(&rt)?;
        Pose::new(-(rt * self.translation), rotation, self.covariance)
    }
}

/// Frames of the mapping pipeline: inertial -> base -> sensor, plus the
/// position of the map origin relative to the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGraph {
    pub inertial_to_base: Pose,
    /// Static extrinsic calibration; treated as exact.
    pub base_to_sensor: Pose,
    /// Map origin relative to the base origin, in map (inertial) axes.
    pub base_to_map: Vector3<f64>,
}

impl FrameGraph {
    pub fn inertial_to_sensor(&self) -> Result<Pose, GeometryError> {
        self.inertial_to_base.compose(&self.base_to_sensor)
    }

    /// Sensor pose expressed in the map frame. The map frame keeps the
    /// inertial axis directions, so only the origin moves.
    pub fn sensor_in_map(&self) -> Result<Pose, GeometryError> {
        let is = self.inertial_to_sensor()?;
        let lever = self.inertial_to_base.rotation().rotate(self.base_to_sensor.translation());
        Pose::new(lever - self.base_to_map, *is.rotation(), *is.covariance())
    }
}

pub fn transform_point(pose: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.matrix() * p + pose.translation
}

/// Up-positive elevation in the map frame of a sensor-frame point.
pub fn height_measurement(point_s: &Vector3<f64>, sensor_to_map: &Pose) -> f64 {
    -transform_point(sensor_to_map, point_s).z
}

/// `d h / d point_S`: the negated third row of the sensor-to-map rotation.
pub fn jacobian_range(_point_s: &Vector3<f64>, sensor_to_map: &Pose) -> RowVector3<f64> {
    -sensor_to_map.rotation.matrix().row(2).into_owned()
}

/// `d h / d [roll, pitch, yaw]` of the sensor-to-map rotation, by central
/// differences with [`ROTATION_FD_STEP`].
pub fn jacobian_rotation(point_s: &Vector3<f64>, sensor_to_map: &Pose) -> RowVector3<f64> {
    jacobian_rotation_with_step(point_s, sensor_to_map, ROTATION_FD_STEP)
}

pub fn jacobian_rotation_with_step(
    point_s: &Vector3<f64>,
    sensor_to_map: &Pose,
    step: f64,
) -> RowVector3<f64> {
    let angles = sensor_to_map.rotation.angles();
    let t = sensor_to_map.translation;
    let height = |a: [f64; 3]| -(Rotation::from_angles(a).matrix() * point_s + t).z;
    let mut j = RowVector3::zeros();
    for k in 0..3 {
        let mut plus = angles;
        let mut minus = angles;
        plus[k] += step;
        minus[k] -= step;
        j[k] = (height(plus) - height(minus)) / (2.0 * step);
    }
    j
}

/// Rotation Jacobians of the unit axes: row `i` is `jacobian_rotation(e_i)`
/// with the translation removed. Because the height is linear in the point,
/// `jacobian_rotation(p) = p^T * basis` for any `p`.
pub fn rotation_jacobian_basis(rotation: &Rotation) -> Matrix3<f64> {
    let pose = Pose {
        translation: Vector3::zeros(),
        rotation: *rotation,
        covariance: Matrix6::zeros(),
    };
    let mut basis = Matrix3::zeros();
    for i in 0..3 {
        let e = Vector3::ith(i, 1.0);
        basis.set_row(i, &jacobian_rotation(&e, &pose));
    }
    basis
}
