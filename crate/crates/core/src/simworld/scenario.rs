//! End-to-end mapping runs over a synthetic world.

use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::degradation::{bin_ranges, classify_labels, DegradationModel};
use super::heightfield::{self, Heightfield, Rect};
use super::raycast::{pixel_rays, Raycaster};
use super::trajectory::{step_covariance, Trajectory};
use super::SimError;
use crate::elevmap::{ElevationMap, FusedMap, MapConfig, ScanStats};
use crate::geometry::{FrameGraph, Pose, Rotation};
use crate::io_formats::config::{ScenarioConfig, WorldPreset};
use crate::io_formats::{Grid, Layer};
use crate::rangesensor::{CameraIntrinsics, RangeClassScheme, RangeSensor};

/// Camera intrinsics plus its fixed mounting on the base.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    /// Sensor to base (NED body axes: x forward, y right, z down).
    pub base_to_sensor: Pose,
    pub min_run: usize,
}

impl CameraRig {
    /// Forward-looking camera pitched down by `tilt_deg`, image x to the
    /// right of the vehicle.
    pub fn forward_tilted(
        intrinsics: CameraIntrinsics,
        tilt_deg: f64,
        offset: Vector3<f64>,
        min_run: usize,
    ) -> Result<Self, SimError> {
        let (s, c) = tilt_deg.to_radians().sin_cos();
        let m = Matrix3::from_columns(&[
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(-s, 0.0, c),
            Vector3::new(c, 0.0, s),
        ]);
        let base_to_sensor = Pose::exact(offset, Rotation::from_matrix(&m)?)?;
        Ok(Self {
            intrinsics,
            base_to_sensor,
            min_run,
        })
    }
}

/// Odometry noise per trajectory step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseNoise {
    pub translation_sigma: f64,
    /// Radians.
    pub rotation_sigma: f64,
    /// Perturb the translation increments with draws from the covariance.
    pub sample: bool,
    pub seed: u64,
}

impl PoseNoise {
    pub fn covariance(&self) -> Matrix6<f64> {
        step_covariance(self.translation_sigma, self.rotation_sigma)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub heightfield: Heightfield,
    pub trajectory: Trajectory,
    pub camera: CameraRig,
    pub scheme: RangeClassScheme,
    pub degradation: DegradationModel,
    pub map: MapConfig,
    pub noise: PoseNoise,
    pub max_range: f64,
    pub march_step: f64,
}

pub fn preset(world: WorldPreset) -> Heightfield {
    match world {
        WorldPreset::Flat => Heightfield::flat(0.0),
        WorldPreset::Wall => heightfield::wall(8.0, 3.0),
        WorldPreset::PlateauGap => heightfield::plateau_gap(),
        WorldPreset::Undulating => heightfield::undulating(),
    }
}

impl Scenario {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self, SimError> {
        config.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let noise = PoseNoise {
            translation_sigma: config.noise.translation_sigma,
            rotation_sigma: config.noise.rotation_sigma_deg.to_radians(),
            sample: config.noise.sample,
            seed: config.seed.value,
        };
        let t = &config.trajectory;
        let trajectory = Trajectory::transect(t.start_x, t.end_x, t.y, t.elevation, t.step, t.dt, noise.covariance())?;
        let camera = CameraRig::forward_tilted(
            config.camera.intrinsics()?,
            config.camera.tilt_deg,
            Vector3::from(config.camera.offset),
            config.camera.min_run,
        )?;
        Ok(Self {
            heightfield: preset(config.world.preset),
            trajectory,
            camera,
            scheme: config.scheme.clone(),
            degradation: DegradationModel::new(config.degradation.epsilon, config.degradation.smear)?,
            map: config.map,
            noise,
            max_range: config.world.max_range,
            march_step: config.map.resolution / 2.0,
        })
    }

    fn check(&self) -> Result<(), SimError> {
        self.scheme.validate()?;
        self.camera.intrinsics.validate()?;
        self.map.cells()?;
        if !(self.max_range > 0.0) {
            return Err(SimError::Config(format!("max_range must be positive, got {}", self.max_range)));
        }
        if !(self.march_step > 0.0) {
            return Err(SimError::Config(format!("march step must be positive, got {}", self.march_step)));
        }
        if self.scheme.class_count() > u8::MAX as usize {
            return Err(SimError::Config("too many range classes".into()));
        }
        Ok(())
    }

    // x-y area reachable by any camera ray along the trajectory.
    fn reach(&self) -> Rect {
        let lever = self.camera.base_to_sensor.translation().norm();
        let pad = self.max_range + lever + 1.0;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in self.trajectory.poses() {
            let t = p.pose.translation();
            x0 = x0.min(t.x);
            x1 = x1.max(t.x);
            y0 = y0.min(t.y);
            y1 = y1.max(t.y);
        }
        Rect::new(x0 - pad, x1 + pad, y0 - pad, y1 + pad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    /// Estimated base position (x, y) and up-positive elevation.
    pub x: f64,
    pub y: f64,
    pub elevation: f64,
    pub stats: ScanStats,
    /// Mean class-pdf range variance over the frame.
    pub mean_range_variance: f64,
}

/// Wall-clock seconds per pipeline stage, summed over steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub raycast: f64,
    pub classify: f64,
    pub sense: f64,
    pub motion_update: f64,
    pub integrate_scan: f64,
    pub fuse: f64,
}

/// Wall-clock seconds of the map-update stages for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameLatency {
    pub sense: f64,
    pub motion_update: f64,
    pub integrate_scan: f64,
}

impl FrameLatency {
    pub fn map_update(&self) -> f64 {
        self.sense + self.motion_update + self.integrate_scan
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub epsilon: f64,
    pub map: ElevationMap,
    pub fused: FusedMap,
    /// Heightfield on the map cells, relative to the final base elevation.
    pub truth: Grid,
    pub logs: Vec<StepLog>,
    /// World position of the minimum corner of map cell (0, 0).
    pub origin: (f64, f64),
    pub times: StageTimes,
    /// Per-frame latencies, parallel to `logs`. Not deterministic.
    pub latencies: Vec<FrameLatency>,
}

impl ScenarioResult {
    /// Raw and fused layers in world-aligned coordinates.
    pub fn map_grid(&self) -> Grid {
        self.map.snapshot(Some(&self.fused), self.origin)
    }

    /// Mean over frames of the per-frame mean range variance.
    pub fn mean_range_variance(&self) -> f64 {
        if self.logs.is_empty() {
            return 0.0;
        }
        self.logs.iter().map(|l| l.mean_range_variance).sum::<f64>() / self.logs.len() as f64
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, SimError> {
    let mut out = run_scenarios(scenario, &[scenario.degradation])?;
    Ok(out.remove(0))
}

struct Pipeline {
    model: DegradationModel,
    map: ElevationMap,
    logs: Vec<StepLog>,
    times: StageTimes,
    latencies: Vec<FrameLatency>,
}

/// Runs one mapping pipeline per degradation model over the same frames.
/// Each result is identical to a separate [`run_scenario`] call.
pub fn run_scenarios(scenario: &Scenario, models: &[DegradationModel]) -> Result<Vec<ScenarioResult>, SimError> {
    scenario.check()?;
    for m in models {
        DegradationModel::new(m.epsilon, m.smear)?;
    }
    let k = &scenario.camera.intrinsics;
    let sensor = RangeSensor {
        intrinsics: *k,
        scheme: scenario.scheme.clone(),
        min_run: scenario.camera.min_run,
    };
    let mut pipelines = models
        .iter()
        .map(|&model| {
            Ok(Pipeline {
                model,
                map: ElevationMap::new(scenario.map)?,
                logs: Vec::new(),
                times: StageTimes::default(),
                latencies: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let poses = scenario.trajectory.poses();
    let reach = if poses.is_empty() {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    } else {
        scenario.reach()
    };
    let caster = Raycaster::new(&scenario.heightfield, reach, scenario.march_step);
    let rays = pixel_rays(k);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise.seed);
    let normal = Normal::new(0.0, scenario.noise.translation_sigma.max(0.0))
        .map_err(|e| SimError::Config(format!("translation noise: {e}")))?;
    let attitude_cov = {
        let r = scenario.noise.rotation_sigma.powi(2);
        let mut c = Matrix6::zeros();
        for i in 3..6 {
            c[(i, i)] = r;
        }
        c
    };

    let start = poses.first().map(|p| *p.pose.translation()).unwrap_or_else(Vector3::zeros);
    let mut estimate = start;
    let mut raycast_time = 0.0;

    for (i, timed) in poses.iter().enumerate() {
        let truth_pose = &timed.pose;
        let delta = if i == 0 {
            None
        } else {
            let prev = &poses[i - 1].pose;
            let mut dt = truth_pose.translation() - prev.translation();
            if scenario.noise.sample {
                for c in dt.iter_mut() {
                    *c += normal.sample(&mut rng);
                }
            }
            estimate += dt;
            let rel = Rotation::from_matrix(&(prev.rotation().matrix().transpose() * truth_pose.rotation().matrix()))?;
            Some(Pose::new(dt, rel, *truth_pose.covariance())?)
        };

        let clock = Instant::now();
        let camera = Pose::exact(*truth_pose.translation(), *truth_pose.rotation())?.compose(&scenario.camera.base_to_sensor)?;
        let ranges = caster.render_rays(&camera, &rays, k.width, k.height, scenario.max_range);
        let labels = bin_ranges(&ranges, &scenario.scheme);
        raycast_time += clock.elapsed().as_secs_f64();

        let base_estimate = Pose::new(estimate, *truth_pose.rotation(), attitude_cov)?;
        for p in pipelines.iter_mut() {
            let clock = Instant::now();
            let image = classify_labels(&labels, k.width, k.height, scenario.scheme.class_count(), &p.model);
            let mean_range_variance = image.mean_range_variance(&scenario.scheme);
            p.times.classify += clock.elapsed().as_secs_f64();

            let mut latency = FrameLatency::default();
            let clock = Instant::now();
            let points = sensor.sense(&image)?;
            latency.sense = clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            if let Some(d) = &delta {
                p.map.motion_update(d);
            }
            latency.motion_update = clock.elapsed().as_secs_f64();

            let clock = Instant::now();
            let off = p.map.robot_offset();
            let frames = FrameGraph {
                inertial_to_base: base_estimate,
                base_to_sensor: scenario.camera.base_to_sensor,
                base_to_map: Vector3::new(-off.x, -off.y, 0.0),
            };
            let stats = p.map.integrate_scan(&points, &frames.sensor_in_map()?);
            latency.integrate_scan = clock.elapsed().as_secs_f64();
            p.times.sense += latency.sense;
            p.times.motion_update += latency.motion_update;
            p.times.integrate_scan += latency.integrate_scan;
            p.latencies.push(latency);

            p.logs.push(StepLog {
                step: i,
                time: timed.time,
                x: estimate.x,
                y: estimate.y,
                elevation: -estimate.z,
                stats,
                mean_range_variance,
            });
        }
    }

    let final_elevation = -estimate.z;
    Ok(pipelines
        .into_iter()
        .map(|mut p| {
            let clock = Instant::now();
            let fused = p.map.fuse();
            p.times.fuse = clock.elapsed().as_secs_f64();
            p.times.raycast = raycast_time;
            let g = p.map.grid_origin();
            let origin = (start.x + g.0, start.y + g.1);
            let truth = truth_grid(&scenario.heightfield, &p.map, origin, final_elevation);
            ScenarioResult {
                epsilon: p.model.epsilon,
                map: p.map,
                fused,
                truth,
                logs: p.logs,
                origin,
                times: p.times,
                latencies: p.latencies,
            }
        })
        .collect())
}

/// Heightfield sampled at the cell centers, every cell marked observed.
pub fn truth_grid(field: &Heightfield, map: &ElevationMap, origin: (f64, f64), datum: f64) -> Grid {
    let (nx, ny) = (map.cells_x(), map.cells_y());
    let mut grid = Grid::empty(nx, ny, map.resolution(), origin.0, origin.1);
    for iy in 0..ny {
        for ix in 0..nx {
            let (x, y) = grid.cell_center(ix, iy);
            let i = grid.index(ix, iy);
            let h = field.height(x, y) - datum;
            grid.layer_mut(Layer::Height)[i] = h;
            grid.layer_mut(Layer::HeightVariance)[i] = 0.0;
            grid.layer_mut(Layer::HorizontalVariance)[i] = 0.0;
            grid.layer_mut(Layer::FusedHeight)[i] = h;
            grid.layer_mut(Layer::HMin)[i] = h;
            grid.layer_mut(Layer::HMax)[i] = h;
            grid.layer_mut(Layer::Observed)[i] = 1.0;
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(preset: WorldPreset) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.world.preset = preset;
        c.camera.width = 128;
        c.camera.height = 96;
        c.trajectory.end_x = 2.0;
        c.trajectory.step = 0.1;
        c.map.length_x = 8.0;
        c.map.length_y = 6.0;
        c
    }

    #[test]
    fn camera_looks_forward_and_down() {
        let rig = CameraRig::forward_tilted(CameraIntrinsics::from_fov(8, 6, 80.0).unwrap(), 20.0, Vector3::zeros(), 2)
            .unwrap();
        let r = rig.base_to_sensor.rotation().matrix();
        let axis = r * Vector3::z();
        assert!((axis - Vector3::new(20f64.to_radians().cos(), 0.0, 20f64.to_radians().sin())).norm() < 1e-12);
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-12);
    }

    #[test]
    fn zero_length_trajectory() {
        let mut s = Scenario::from_config(&small(WorldPreset::Flat)).unwrap();
        s.trajectory = Trajectory::empty();
        let r = run_scenario(&s).unwrap();
        assert!(r.logs.is_empty());
        assert_eq!(r.map.observed_count(), 0);
        assert!(r.fused.height.iter().all(|h| h.is_nan()));
    }

    #[test]
    fn flat_world_heights_near_ground() {
        let s = Scenario::from_config(&small(WorldPreset::Flat)).unwrap();
        let r = run_scenario(&s).unwrap();
        let mut checked = 0;
        for i in 0..r.fused.height.len() {
            if r.fused.is_fused(i) {
                // ground is 1 m below the base
                assert!((r.fused.height[i] + 1.0).abs() <= 0.5, "{}", r.fused.height[i]);
                checked += 1;
            }
        }
        assert!(checked > 100);
        assert!(r.logs.iter().all(|l| l.mean_range_variance == 0.0));
        assert!((r.truth.layer(Layer::Height)[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn runs_are_bit_identical_and_lockstep_matches() {
        let mut c = small(WorldPreset::Undulating);
        c.noise.sample = true;
        c.seed.value = 7;
        c.degradation.epsilon = 0.2;
        let s = Scenario::from_config(&c).unwrap();
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(a.map_grid().to_bytes(), b.map_grid().to_bytes());
        let multi = run_scenarios(&s, &[DegradationModel::default(), s.degradation]).unwrap();
        assert_eq!(multi[1].map_grid().to_bytes(), a.map_grid().to_bytes());
        assert_eq!(multi[1].logs, a.logs);
    }

    #[test]
    fn class_mismatch_is_reported() {
        let mut s = Scenario::from_config(&small(WorldPreset::Flat)).unwrap();
        s.scheme.bin_edges.pop();
        assert!(run_scenario(&s).is_err());
    }
}
