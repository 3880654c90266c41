//! Robot-centric probabilistic elevation grid.
//!
//! The map keeps the inertial axis directions and follows the robot: motion
//! updates shift a circular buffer by whole cells and carry the fractional
//! remainder as the robot's offset from the map origin. Heights are
//! up-positive and referenced to the robot base elevation, so vertical
//! motion re-references every cell. Pose uncertainty accumulated by motion is
//! pushed into the cells' height and horizontal variances.
//!
//! The map is single-writer: every mutating operation takes `&mut self`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    height_measurement, jacobian_range, jacobian_rotation, rotation_jacobian_basis, transform_point, Pose,
};
use crate::io_formats::{Grid, Layer};
use crate::rangesensor::RangePoint;

/// Lower bound on every stored variance (m^2).
pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("map resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("map side lengths must be positive, got {0} x {1}")]
    BadSize(f64, f64),
    #[error("map of {0} x {1} cells is too large")]
    TooLarge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Cell edge length (m).
    pub resolution: f64,
    /// Extent along x (m).
    pub length_x: f64,
    /// Extent along y (m).
    pub length_y: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.02,
            length_x: 5.0,
            length_y: 5.0,
        }
    }
}

impl MapConfig {
    pub fn cells(&self) -> Result<(usize, usize), MapError> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(MapError::BadResolution(self.resolution));
        }
        if !(self.length_x > 0.0 && self.length_y > 0.0) || !self.length_x.is_finite() || !self.length_y.is_finite() {
            return Err(MapError::BadSize(self.length_x, self.length_y));
        }
        let nx = (self.length_x / self.resolution).round() as usize;
        let ny = (self.length_y / self.resolution).round() as usize;
        if nx == 0 || ny == 0 {
            return Err(MapError::BadSize(self.length_x, self.length_y));
        }
        if nx.saturating_mul(ny) > 1 << 26 {
            return Err(MapError::TooLarge(nx, ny));
        }
        Ok((nx, ny))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCell {
    pub height: f64,
    pub height_variance: f64,
    pub horizontal_variance: f64,
    pub observed: bool,
    pub last_update: u64,
}

impl MapCell {
    pub const UNOBSERVED: MapCell = MapCell {
        height: f64::NAN,
        height_variance: f64::NAN,
        horizontal_variance: f64::NAN,
        observed: false,
        last_update: 0,
    };

    pub fn observed(height: f64, height_variance: f64) -> Self {
        Self {
            height,
            height_variance,
            horizontal_variance: 0.0,
            observed: true,
            last_update: 0,
        }
    }
}

/// Variance-weighted fusion of one height measurement into a cell.
///
/// Unobserved cells take the measurement as-is. When both variances are zero
/// the measurement wins with zero variance.
pub fn update_cell(cell: &MapCell, h_meas: f64, var_meas: f64) -> MapCell {
    let mut out = *cell;
    out.observed = true;
    if !cell.observed {
        out.height = h_meas;
        out.height_variance = var_meas;
        return out;
    }
    let prior_var = cell.height_variance;
    let total = prior_var + var_meas;
    if total <= 0.0 {
        log::debug!("degenerate fusion: both variances zero, keeping measurement {h_meas}");
        out.height = h_meas;
        out.height_variance = 0.0;
        return out;
    }
    out.height = (var_meas * cell.height + prior_var * h_meas) / total;
    out.height_variance = prior_var * var_meas / total;
    out
}

/// Height variance of a measurement: ray variance projected through the
/// range Jacobian plus rotation covariance through the rotation Jacobian.
pub fn measurement_variance(point_s: &Vector3<f64>, sensor_pose: &Pose, range_variance: f64) -> f64 {
    let j_s = jacobian_range(point_s, sensor_pose);
    let along = match point_s.try_normalize(0.0) {
        Some(d) => (j_s * d)[0],
        None => 0.0,
    };
    let j_phi = jacobian_rotation(point_s, sensor_pose);
    let rot = (j_phi * sensor_pose.rotation_covariance() * j_phi.transpose())[0];
    range_variance * along * along + rot
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub points: usize,
    pub fused: usize,
    pub out_of_grid: usize,
    pub degenerate: usize,
}

/// Per-cell fused heights with confidence bounds, row-major in map order.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMap {
    pub cells_x: usize,
    pub cells_y: usize,
    pub height: Vec<f64>,
    pub h_min: Vec<f64>,
    pub h_max: Vec<f64>,
}

impl FusedMap {
    pub fn is_fused(&self, index: usize) -> bool {
        !self.height[index].is_nan()
    }
}

#[derive(Debug, Clone)]
pub struct ElevationMap {
    config: MapConfig,
    cells_x: usize,
    cells_y: usize,
    // storage-ordered layers
    height: Vec<f64>,
    height_variance: Vec<f64>,
    horizontal_variance: Vec<f64>,
    observed: Vec<bool>,
    last_update: Vec<u64>,
    // storage index of logical cell (0, 0)
    start: (usize, usize),
    // total whole-cell shift of the map origin since creation
    shift: (i64, i64),
    // robot base position relative to the map origin
    robot_offset: Vector2<f64>,
    tick: u64,
}

impl ElevationMap {
    pub fn new(config: MapConfig) -> Result<Self, MapError> {
        let (nx, ny) = config.cells()?;
        let n = nx * ny;
        Ok(Self {
            config,
            cells_x: nx,
            cells_y: ny,
            height: vec![f64::NAN; n],
            height_variance: vec![f64::NAN; n],
            horizontal_variance: vec![f64::NAN; n],
            observed: vec![false; n],
            last_update: vec![0; n],
            start: (0, 0),
            shift: (0, 0),
            robot_offset: Vector2::zeros(),
            tick: 0,
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn cells_x(&self) -> usize {
        self.cells_x
    }

    pub fn cells_y(&self) -> usize {
        self.cells_y
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn cell_count(&self) -> usize {
        self.cells_x * self.cells_y
    }

    /// Accumulated whole-cell motion of the map origin.
    pub fn shift(&self) -> (i64, i64) {
        self.shift
    }

    /// Robot base position relative to the map origin (x, y).
    pub fn robot_offset(&self) -> Vector2<f64> {
        self.robot_offset
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    fn storage(&self, ix: usize, iy: usize) -> usize {
        let sx = (self.start.0 + ix) % self.cells_x;
        let sy = (self.start.1 + iy) % self.cells_y;
        sy * self.cells_x + sx
    }

    /// Center of logical cell `(ix, iy)` in the map frame.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let r = self.config.resolution;
        (
            (ix as f64 - self.cells_x as f64 / 2.0 + 0.5) * r,
            (iy as f64 - self.cells_y as f64 / 2.0 + 0.5) * r,
        )
    }

    /// Logical cell containing map-frame position `(x, y)`.
    pub fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = self.config.resolution;
        let fx = (x / r + self.cells_x as f64 / 2.0).floor();
        let fy = (y / r + self.cells_y as f64 / 2.0).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.cells_x as f64 && fy < self.cells_y as f64 {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn cell(&self, ix: usize, iy: usize) -> MapCell {
        let s = self.storage(ix, iy);
        if !self.observed[s] {
            return MapCell::UNOBSERVED;
        }
        MapCell {
            height: self.height[s],
            height_variance: self.height_variance[s],
            horizontal_variance: self.horizontal_variance[s],
            observed: true,
            last_update: self.last_update[s],
        }
    }

    pub fn set_cell(&mut self, ix: usize, iy: usize, cell: MapCell) {
        let s = self.storage(ix, iy);
        self.store(s, &cell);
    }

    fn store(&mut self, s: usize, cell: &MapCell) {
        if cell.observed {
            self.height[s] = cell.height;
            self.height_variance[s] = cell.height_variance.max(VARIANCE_FLOOR);
            self.horizontal_variance[s] = cell.horizontal_variance.max(VARIANCE_FLOOR);
            self.observed[s] = true;
            self.last_update[s] = cell.last_update;
        } else {
            self.clear_storage(s);
        }
    }

    fn clear_storage(&mut self, s: usize) {
        self.height[s] = f64::NAN;
        self.height_variance[s] = f64::NAN;
        self.horizontal_variance[s] = f64::NAN;
        self.observed[s] = false;
        self.last_update[s] = 0;
    }

    /// Fuses one scan of sensor-frame points. `sensor_pose_in_map` places the
    /// sensor relative to the map origin; its rotation covariance block feeds
    /// the measurement variance and its x-y translation covariance seeds the
    /// horizontal variance of touched cells.
    pub fn integrate_scan(&mut self, points: &[RangePoint], sensor_pose_in_map: &Pose) -> ScanStats {
        self.tick += 1;
        let mut stats = ScanStats {
            points: points.len(),
            ..Default::default()
        };
        if points.is_empty() {
            return stats;
        }
        let j_range = jacobian_range(&Vector3::zeros(), sensor_pose_in_map);
        let basis = rotation_jacobian_basis(sensor_pose_in_map.rotation());
        let rot_cov = sensor_pose_in_map.rotation_covariance();
        let tcov = sensor_pose_in_map.translation_covariance();
        let pose_xy = 0.5 * (tcov[(0, 0)] + tcov[(1, 1)]);

        for p in points {
            let q = transform_point(sensor_pose_in_map, &p.point_s);
            let Some((ix, iy)) = self.cell_index(q.x, q.y) else {
                stats.out_of_grid += 1;
                continue;
            };
            let h = height_measurement(&p.point_s, sensor_pose_in_map);
            let var = fast_measurement_variance(&p.point_s, p.range_variance, &j_range, &basis, &rot_cov);
            let s = self.storage(ix, iy);
            let prior = if self.observed[s] {
                MapCell {
                    height: self.height[s],
                    height_variance: self.height_variance[s],
                    horizontal_variance: self.horizontal_variance[s],
                    observed: true,
                    last_update: self.last_update[s],
                }
            } else {
                MapCell::UNOBSERVED
            };
            if prior.observed && prior.height_variance <= 0.0 && var <= 0.0 {
                stats.degenerate += 1;
            }
            let mut cell = update_cell(&prior, h, var);
            cell.horizontal_variance = pose_xy + p.lateral_variance;
            cell.last_update = self.tick;
            self.store(s, &cell);
            stats.fused += 1;
        }
        stats
    }

    /// Applies base motion since the last update. `pose_delta` carries the
    /// translation in map axes (NED: z down) and its 6x6 covariance; its
    /// rotation is the attitude change, about which rotation uncertainty is
    /// linearized.
    pub fn motion_update(&mut self, pose_delta: &Pose) {
        let r = self.config.resolution;
        let t = pose_delta.translation();
        self.robot_offset += Vector2::new(t.x, t.y);
        let kx = (self.robot_offset.x / r).round();
        let ky = (self.robot_offset.y / r).round();
        self.robot_offset -= Vector2::new(kx * r, ky * r);
        self.shift_cells(kx as i64, ky as i64);

        let dz_up = -t.z;
        let cov = pose_delta.covariance();
        let var_z = cov[(2, 2)];
        let var_xy = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        let rot_cov = pose_delta.rotation_covariance();
        let basis = rotation_jacobian_basis(pose_delta.rotation());
        // J_phi(p) = p^T * basis, so J cov J^T = p^T (basis cov basis^T) p
        let m = basis * rot_cov * basis.transpose();
        let rotation_free = m.iter().all(|&v| v == 0.0);

        if dz_up == 0.0 && var_z == 0.0 && var_xy == 0.0 && rotation_free {
            return;
        }
        let off = self.robot_offset;
        for iy in 0..self.cells_y {
            let (_, cy) = self.cell_center(0, iy);
            for ix in 0..self.cells_x {
                let s = self.storage(ix, iy);
                if !self.observed[s] {
                    continue;
                }
                self.height[s] -= dz_up;
                let mut add = var_z;
                if !rotation_free {
                    let (cx, _) = self.cell_center(ix, 0);
                    let p = Vector3::new(cx - off.x, cy - off.y, -self.height[s]);
                    add += (p.transpose() * m * p)[0];
                }
                self.height_variance[s] += add;
                self.horizontal_variance[s] += var_xy;
            }
        }
    }

    fn shift_cells(&mut self, kx: i64, ky: i64) {
        if kx != 0 {
            self.shift_axis(kx, true);
        }
        if ky != 0 {
            self.shift_axis(ky, false);
        }
        self.shift.0 += kx;
        self.shift.1 += ky;
    }

    // Moves the origin by k cells along one axis and clears the cells that
    // wrap around to the leading edge.
    fn shift_axis(&mut self, k: i64, along_x: bool) {
        let n = if along_x { self.cells_x } else { self.cells_y } as i64;
        if k.abs() >= n {
            for s in 0..self.cell_count() {
                self.clear_storage(s);
            }
            return;
        }
        let start = if along_x { self.start.0 } else { self.start.1 } as i64;
        let new_start = (start + k).rem_euclid(n) as usize;
        if along_x {
            self.start.0 = new_start;
        } else {
            self.start.1 = new_start;
        }
        let cleared = if k > 0 { (n - k)..n } else { 0..(-k) };
        for line in cleared {
            let line = line as usize;
            if along_x {
                for iy in 0..self.cells_y {
                    let s = self.storage(line, iy);
                    self.clear_storage(s);
                }
            } else {
                for ix in 0..self.cells_x {
                    let s = self.storage(ix, line);
                    self.clear_storage(s);
                }
            }
        }
    }

    /// Logical-order copies of the layers.
    fn logical_layers(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
        let n = self.cell_count();
        let mut h = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut hv = Vec::with_capacity(n);
        let mut o = Vec::with_capacity(n);
        for iy in 0..self.cells_y {
            for ix in 0..self.cells_x {
                let s = self.storage(ix, iy);
                h.push(self.height[s]);
                v.push(self.height_variance[s]);
                hv.push(self.horizontal_variance[s]);
                o.push(self.observed[s]);
            }
        }
        (h, v, hv, o)
    }

    /// Weighted mean over the observed cells inside each cell's 2-sigma
    /// horizontal circle, with bounds from the contributors' 2-sigma ranges.
    pub fn fuse(&self) -> FusedMap {
        let (h, v, hv, o) = self.logical_layers();
        let (nx, ny) = (self.cells_x, self.cells_y);
        let res = self.config.resolution;
        let n = nx * ny;
        let mut fused = FusedMap {
            cells_x: nx,
            cells_y: ny,
            height: vec![f64::NAN; n],
            h_min: vec![f64::NAN; n],
            h_max: vec![f64::NAN; n],
        };
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                if !o[i] {
                    continue;
                }
                let radius = 2.0 * hv[i].max(0.0).sqrt() / res;
                let r2 = radius * radius;
                let reach = radius.floor() as i64;
                let y0 = (iy as i64 - reach).max(0) as usize;
                let y1 = ((iy as i64 + reach) as usize).min(ny - 1);
                let x0 = (ix as i64 - reach).max(0) as usize;
                let x1 = ((ix as i64 + reach) as usize).min(nx - 1);
                let (mut wsum, mut hsum) = (0.0, 0.0);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for jy in y0..=y1 {
                    let dy = jy as f64 - iy as f64;
                    for jx in x0..=x1 {
                        let j = jy * nx + jx;
                        if !o[j] {
                            continue;
                        }
                        let dx = jx as f64 - ix as f64;
                        if dx * dx + dy * dy > r2 {
                            continue;
                        }
                        let var = v[j].max(VARIANCE_FLOOR);
                        let w = 1.0 / var;
                        wsum += w;
                        hsum += w * h[j];
                        let sigma = var.sqrt();
                        lo = lo.min(h[j] - 2.0 * sigma);
                        hi = hi.max(h[j] + 2.0 * sigma);
                    }
                }
                let mean = (hsum / wsum).clamp(lo, hi);
                fused.height[i] = mean;
                fused.h_min[i] = lo;
                fused.h_max[i] = hi;
            }
        }
        fused
    }

    /// Exports the raw layers (and fused layers if given) as a grid whose
    /// cell (0, 0) minimum corner sits at `origin`.
    pub fn snapshot(&self, fused: Option<&FusedMap>, origin: (f64, f64)) -> Grid {
        let (h, v, hv, o) = self.logical_layers();
        let mut grid = Grid::empty(self.cells_x, self.cells_y, self.config.resolution, origin.0, origin.1);
        for i in 0..self.cell_count() {
            if !o[i] {
                continue;
            }
            grid.layer_mut(Layer::Height)[i] = h[i];
            grid.layer_mut(Layer::HeightVariance)[i] = v[i];
            grid.layer_mut(Layer::HorizontalVariance)[i] = hv[i];
            grid.layer_mut(Layer::Observed)[i] = 1.0;
            if let Some(f) = fused {
                grid.layer_mut(Layer::FusedHeight)[i] = f.height[i];
                grid.layer_mut(Layer::HMin)[i] = f.h_min[i];
                grid.layer_mut(Layer::HMax)[i] = f.h_max[i];
            }
        }
        grid
    }

    /// Map-frame origin (minimum corner of logical cell (0, 0)) relative to
    /// the map origin at creation.
    pub fn grid_origin(&self) -> (f64, f64) {
        let r = self.config.resolution;
        (
            (self.shift.0 as f64 - self.cells_x as f64 / 2.0) * r,
            (self.shift.1 as f64 - self.cells_y as f64 / 2.0) * r,
        )
    }
}

fn fast_measurement_variance(
    point_s: &Vector3<f64>,
    range_variance: f64,
    j_range: &nalgebra::RowVector3<f64>,
    basis: &Matrix3<f64>,
    rot_cov: &Matrix3<f64>,
) -> f64 {
    let mut var = 0.0;
    if range_variance > 0.0 {
        if let Some(d) = point_s.try_normalize(0.0) {
            let along = (j_range * d)[0];
            var += range_variance * along * along;
        }
    }
    let j_phi = point_s.transpose() * basis;
    var + (j_phi * rot_cov * j_phi.transpose())[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use approx::assert_relative_eq;
    use nalgebra::Matrix6;
    use proptest::prelude::*;

    fn point(p: [f64; 3], var: f64) -> RangePoint {
        let v = Vector3::from(p);
        RangePoint {
            point_s: v,
            range_mean: v.norm(),
            range_variance: var,
            lateral_variance: 0.0,
            pixel: (0, 0),
        }
    }

    fn small_map() -> ElevationMap {
        ElevationMap::new(MapConfig {
            resolution: 0.1,
            length_x: 2.0,
            length_y: 2.0,
        })
        .unwrap()
    }

    fn delta(t: [f64; 3], cov_diag: [f64; 6]) -> Pose {
        Pose::new(
            Vector3::from(t),
            Rotation::identity(),
            Matrix6::from_diagonal(&nalgebra::Vector6::from(cov_diag)),
        )
        .unwrap()
    }

    #[test]
    fn cell_count_is_exact() {
        let m = ElevationMap::new(MapConfig::default()).unwrap();
        assert_eq!(m.cell_count(), 250 * 250);
        assert!(ElevationMap::new(MapConfig {
            resolution: 0.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn update_cell_examples() {
        let c = update_cell(&MapCell::observed(0.0, 1.0), 1.0, 1.0);
        assert_eq!((c.height, c.height_variance), (0.5, 0.5));

        let c = update_cell(&MapCell::observed(2.0, 0.25), 4.0, 1e12);
        assert_relative_eq!(c.height, 2.0, epsilon = 1e-6);
        assert_relative_eq!(c.height_variance, 0.25, epsilon = 1e-6);

        let c = update_cell(&MapCell::observed(1.0, 0.5), 2.0, 0.25);
        assert_relative_eq!(c.height, 5.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(c.height_variance, 1.0 / 6.0, epsilon = 1e-15);

        let c = update_cell(&MapCell::UNOBSERVED, 0.7, 0.3);
        assert_eq!((c.height, c.height_variance, c.observed), (0.7, 0.3, true));

        let c = update_cell(&MapCell::observed(1.0, 0.0), 3.0, 0.0);
        assert_eq!((c.height, c.height_variance), (3.0, 0.0));
    }

    #[test]
    fn measurement_variance_examples() {
        let p = Vector3::new(0.0, 0.0, 2.0);
        assert_eq!(measurement_variance(&p, &Pose::identity(), 0.0), 0.0);
        assert_relative_eq!(measurement_variance(&p, &Pose::identity(), 2.25), 2.25, epsilon = 1e-12);
        let horizontal = Vector3::new(1.5, 0.0, 0.0);
        assert!(measurement_variance(&horizontal, &Pose::identity(), 2.25).abs() < 1e-12);
    }

    #[test]
    fn fast_variance_matches_public_path() {
        let mut cov = Matrix6::zeros();
        for k in 3..6 {
            cov[(k, k)] = 1e-3 * k as f64;
        }
        cov[(3, 4)] = 2e-4;
        cov[(4, 3)] = 2e-4;
        let pose = Pose::new(Vector3::new(0.1, 0.2, -0.9), Rotation::new(1.5, 0.1, 1.2), cov).unwrap();
        let p = Vector3::new(0.3, 0.4, 2.5);
        let slow = measurement_variance(&p, &pose, 0.7);
        let fast = fast_measurement_variance(
            &p,
            0.7,
            &jacobian_range(&p, &pose),
            &rotation_jacobian_basis(pose.rotation()),
            &pose.rotation_covariance(),
        );
        assert_relative_eq!(slow, fast, epsilon = 1e-9);
    }

    #[test]
    fn integrate_scan_examples() {
        let mut m = small_map();
        let before = m.snapshot(None, (0.0, 0.0)).to_bytes();
        let stats = m.integrate_scan(&[], &Pose::identity());
        assert_eq!(stats.points, 0);
        assert_eq!(m.snapshot(None, (0.0, 0.0)).to_bytes(), before);

        // Sensor 1 m above the base datum looking straight down at range 2.
        let sensor = Pose::exact(Vector3::new(0.05, 0.05, -1.0), Rotation::identity()).unwrap();
        let p = point([0.0, 0.0, 2.0], 0.5);
        let mut m = small_map();
        let stats = m.integrate_scan(&[p], &sensor);
        assert_eq!(stats.fused, 1);
        let (ix, iy) = m.cell_index(0.05, 0.05).unwrap();
        let cell = m.cell(ix, iy);
        assert_eq!(cell.height, -1.0);
        assert_relative_eq!(cell.height_variance, measurement_variance(&p.point_s, &sensor, 0.5));
        assert_eq!(m.observed_count(), 1);

        let mut m = small_map();
        m.integrate_scan(&[p, p], &sensor);
        assert_relative_eq!(m.cell(ix, iy).height_variance, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn integrate_counts_out_of_grid() {
        let mut m = small_map();
        let sensor = Pose::exact(Vector3::new(5.0, 0.0, -1.0), Rotation::identity()).unwrap();
        let stats = m.integrate_scan(&[point([0.0, 0.0, 2.0], 0.1)], &sensor);
        assert_eq!((stats.fused, stats.out_of_grid), (0, 1));
    }

    fn seeded_map() -> ElevationMap {
        let mut m = small_map();
        for iy in 0..m.cells_y() {
            for ix in 0..m.cells_x() {
                if (ix + 2 * iy) % 3 == 0 {
                    let mut c = MapCell::observed(ix as f64 * 0.1 - iy as f64 * 0.01, 0.01 + ix as f64 * 1e-3);
                    c.horizontal_variance = 1e-4;
                    m.set_cell(ix, iy, c);
                }
            }
        }
        m
    }

    #[test]
    fn motion_identity_is_noop() {
        let mut m = seeded_map();
        let before = m.snapshot(None, (0.0, 0.0)).to_bytes();
        m.motion_update(&Pose::identity());
        assert_eq!(m.snapshot(None, (0.0, 0.0)).to_bytes(), before);
    }

    #[test]
    fn motion_shifts_by_whole_cells() {
        let mut m = seeded_map();
        let reference = seeded_map();
        let k = 3;
        m.motion_update(&delta([k as f64 * 0.1, 0.0, 0.0], [0.0; 6]));
        assert_eq!(m.shift(), (k, 0));
        for iy in 0..m.cells_y() {
            for ix in 0..m.cells_x() {
                let now = m.cell(ix, iy);
                if ix + (k as usize) < m.cells_x() {
                    let then = reference.cell(ix + k as usize, iy);
                    assert_eq!(now.observed, then.observed);
                    if now.observed {
                        assert_eq!((now.height, now.height_variance), (then.height, then.height_variance));
                    }
                } else {
                    assert!(!now.observed);
                }
            }
        }
    }

    #[test]
    fn motion_negative_shift_and_wraparound() {
        let mut m = seeded_map();
        let reference = seeded_map();
        m.motion_update(&delta([0.0, -0.2, 0.0], [0.0; 6]));
        assert_eq!(m.shift(), (0, -2));
        for iy in 0..m.cells_y() {
            for ix in 0..m.cells_x() {
                let now = m.cell(ix, iy);
                if iy >= 2 {
                    assert_eq!(now.observed, reference.cell(ix, iy - 2).observed);
                } else {
                    assert!(!now.observed);
                }
            }
        }
        m.motion_update(&delta([5.0, 0.0, 0.0], [0.0; 6]));
        assert_eq!(m.observed_count(), 0);
    }

    #[test]
    fn fractional_motion_accumulates() {
        let mut m = small_map();
        for _ in 0..7 {
            m.motion_update(&delta([0.03, -0.01, 0.0], [0.0; 6]));
            let off = m.robot_offset();
            assert!(off.x.abs() <= 0.05 + 1e-12 && off.y.abs() <= 0.05 + 1e-12);
        }
        assert_eq!(m.shift(), (2, -1));
        assert_relative_eq!(m.robot_offset().x, 0.21 - 0.2, epsilon = 1e-12);
    }

    #[test]
    fn z_variance_adds_exactly() {
        let mut m = seeded_map();
        let reference = seeded_map();
        m.motion_update(&delta([0.0, 0.0, 0.0], [0.0, 0.0, 0.01, 0.0, 0.0, 0.0]));
        for iy in 0..m.cells_y() {
            for ix in 0..m.cells_x() {
                let (a, b) = (m.cell(ix, iy), reference.cell(ix, iy));
                if a.observed {
                    assert_eq!(a.height, b.height);
                    assert_relative_eq!(a.height_variance, b.height_variance + 0.01, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn vertical_motion_rereferences_heights() {
        let mut m = seeded_map();
        let reference = seeded_map();
        // base rises 0.25 m (NED z decreases)
        m.motion_update(&delta([0.0, 0.0, -0.25], [0.0; 6]));
        let (a, b) = (m.cell(0, 0), reference.cell(0, 0));
        assert_relative_eq!(a.height, b.height - 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rotation_uncertainty_grows_with_distance() {
        let mut m = small_map();
        m.set_cell(10, 10, MapCell::observed(0.0, 0.01));
        m.set_cell(19, 10, MapCell::observed(0.0, 0.01));
        m.motion_update(&delta([0.0; 3], [0.0, 0.0, 0.0, 1e-4, 1e-4, 1e-4]));
        let near = m.cell(10, 10).height_variance - 0.01;
        let far = m.cell(19, 10).height_variance - 0.01;
        assert!(far > near && near >= 0.0);
        // pitch moves a point at x by x * dpitch, roll one at y by y * droll
        let (cx, cy) = m.cell_center(19, 10);
        assert_relative_eq!(far, (cx * cx + cy * cy) * 1e-4, epsilon = 1e-9);
    }

    #[test]
    fn fuse_examples() {
        let mut m = small_map();
        let mut c = MapCell::observed(1.5, 0.04);
        c.horizontal_variance = 1e-4;
        m.set_cell(4, 4, c);
        let f = m.fuse();
        let i = 4 * m.cells_x() + 4;
        assert_eq!(f.height[i], 1.5);
        assert_relative_eq!(f.h_min[i], 1.1, epsilon = 1e-12);
        assert_relative_eq!(f.h_max[i], 1.9, epsilon = 1e-12);

        let mut m = small_map();
        for (ix, h) in [(4, 0.0), (5, 2.0)] {
            let mut c = MapCell::observed(h, 1.0);
            c.horizontal_variance = 0.01; // 2 sigma = 0.2 m = 2 cells
            m.set_cell(ix, 4, c);
        }
        let f = m.fuse();
        assert_eq!(f.height[4 * 20 + 4], 1.0);
        assert_eq!(f.height[4 * 20 + 5], 1.0);
        assert!(!f.is_fused(0));
    }

    #[test]
    fn snapshot_marks_unobserved_as_nan() {
        let m = seeded_map();
        let g = m.snapshot(Some(&m.fuse()), m.grid_origin());
        for i in 0..g.len() {
            if g.observed(i) {
                assert!(g.layer(Layer::FusedHeight)[i].is_finite());
            } else {
                assert!(g.layer(Layer::Height)[i].is_nan());
            }
        }
        assert_eq!(g.origin_x, -1.0);
    }

    proptest! {
        #[test]
        fn kalman_contracts(
            h0 in -5.0f64..5.0, v0 in 1e-6f64..10.0,
            h1 in -5.0f64..5.0, v1 in 1e-6f64..10.0,
            h2 in -5.0f64..5.0, v2 in 1e-6f64..10.0,
        ) {
            let prior = MapCell::observed(h0, v0);
            let post = update_cell(&prior, h1, v1);
            prop_assert!(post.height_variance <= v0.min(v1) * (1.0 + 1e-12));
            prop_assert!(post.height >= h0.min(h1) - 1e-12 && post.height <= h0.max(h1) + 1e-12);
            let ab = update_cell(&update_cell(&prior, h1, v1), h2, v2);
            let ba = update_cell(&update_cell(&prior, h2, v2), h1, v1);
            prop_assert!((ab.height - ba.height).abs() <= 1e-10);
            prop_assert!((ab.height_variance - ba.height_variance).abs() <= 1e-10);
        }

        #[test]
        fn fused_bounds_are_ordered(
            cells in prop::collection::vec((0usize..20, 0usize..20, -2.0f64..2.0, 0.0f64..1.0, 0.0f64..0.05), 1..40)
        ) {
            let mut m = small_map();
            for (ix, iy, h, v, hv) in cells {
                let mut c = MapCell::observed(h, v);
                c.horizontal_variance = hv;
                m.set_cell(ix, iy, c);
            }
            let f = m.fuse();
            for i in 0..f.height.len() {
                if f.is_fused(i) {
                    prop_assert!(f.h_min[i] <= f.height[i] && f.height[i] <= f.h_max[i]);
                }
            }
        }

        #[test]
        fn zero_covariance_motion_only_drops_shifted_cells(dx in -0.35f64..0.35, dy in -0.35f64..0.35) {
            let mut m = seeded_map();
            let before = m.observed_count();
            m.motion_update(&delta([dx, dy, 0.0], [0.0; 6]));
            let (kx, ky) = m.shift();
            // count cells that survive the shift
            let reference = seeded_map();
            let mut expected = 0;
            for iy in 0..20i64 {
                for ix in 0..20i64 {
                    let (ox, oy) = (ix + kx, iy + ky);
                    if (0..20).contains(&ox) && (0..20).contains(&oy) && reference.cell(ox as usize, oy as usize).observed {
                        expected += 1;
                    }
                }
            }
            prop_assert!(m.observed_count() <= before);
            prop_assert_eq!(m.observed_count(), expected);
        }
    }
}
