//! Per-pixel ray casting against a heightfield.
//!
//! Rays walk a coarse grid of per-block height maxima and skip every block
//! they cross entirely above its maximum. Elsewhere they march with a fixed
//! step and refine the first crossing by bisection.

use nalgebra::Vector3;

use super::heightfield::{Heightfield, Rect};
use crate::geometry::Pose;
use crate::rangesensor::CameraIntrinsics;

pub const DEFAULT_MAX_RANGE: f64 = 10.0;
pub const DEFAULT_MARCH_STEP: f64 = 0.01;
pub const BISECTION_TOLERANCE: f64 = 1e-3;
const BLOCK_SIZE: f64 = 0.25;

/// True Euclidean range per pixel, row-major; `+inf` where nothing is hit.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub width: usize,
    pub height: usize,
    pub ranges: Vec<f64>,
}

impl RangeImage {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.ranges[v * self.width + u]
    }
}

/// Block-maximum acceleration grid over a fixed area of a heightfield.
#[derive(Debug, Clone)]
pub struct Raycaster<'a> {
    field: &'a Heightfield,
    area: Rect,
    nx: usize,
    ny: usize,
    block_max: Vec<f64>,
    block_slope: Vec<f64>,
    step: f64,
}

impl<'a> Raycaster<'a> {
    /// `area` should cover every x-y position a ray can reach; outside it
    /// rays are marched without skipping.
    pub fn new(field: &'a Heightfield, area: Rect, step: f64) -> Self {
        assert!(step > 0.0);
        let nx = (((area.x1 - area.x0) / BLOCK_SIZE).ceil() as usize).max(1);
        let ny = (((area.y1 - area.y0) / BLOCK_SIZE).ceil() as usize).max(1);
        let mut block_max = Vec::with_capacity(nx * ny);
        let mut block_slope = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = area.x0 + i as f64 * BLOCK_SIZE;
                let y = area.y0 + j as f64 * BLOCK_SIZE;
                let block = Rect::new(x, x + BLOCK_SIZE, y, y + BLOCK_SIZE);
                block_max.push(field.upper_bound(&block));
                block_slope.push(field.lipschitz(&block));
            }
        }
        let area = Rect::new(
            area.x0,
            area.x0 + nx as f64 * BLOCK_SIZE,
            area.y0,
            area.y0 + ny as f64 * BLOCK_SIZE,
        );
        Self {
            field,
            area,
            nx,
            ny,
            block_max,
            block_slope,
            step,
        }
    }

    /// Covers a disc of `max_range` around `(x, y)`.
    pub fn around(field: &'a Heightfield, x: f64, y: f64, max_range: f64, step: f64) -> Self {
        let r = max_range + BLOCK_SIZE;
        Self::new(field, Rect::new(x - r, x + r, y - r, y + r), step)
    }

    /// First hit of the ray `origin + t * dir` (NED, `dir` unit length) with
    /// `t` in `(0, max_range]`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> f64 {
        let e0 = -origin.z;
        let de = -dir.z;
        let f = |t: f64| e0 + de * t - self.field.height(origin.x + dir.x * t, origin.y + dir.y * t);
        if f(0.0) <= 0.0 {
            return 0.0;
        }

        let (enter, exit) = self.clip(origin, dir, max_range);
        let mut t = 0.0;
        if enter > 0.0 {
            if let Some(hit) = self.march(&f, 0.0, enter.min(max_range), f64::INFINITY) {
                return hit;
            }
            t = enter.min(max_range);
        }
        if enter < exit {
            if let Some(hit) = self.walk_blocks(&f, origin, dir, e0, de, t, exit) {
                return hit;
            }
            t = exit;
        }
        if t < max_range {
            if let Some(hit) = self.march(&f, t, max_range, f64::INFINITY) {
                return hit;
            }
        }
        f64::INFINITY
    }

    // Parameter interval inside the block area, as (enter, exit); empty when
    // enter >= exit.
    fn clip(&self, o: &Vector3<f64>, d: &Vector3<f64>, max_range: f64) -> (f64, f64) {
        let mut lo: f64 = 0.0;
        let mut hi = max_range;
        for (p, v, a, b) in [(o.x, d.x, self.area.x0, self.area.x1), (o.y, d.y, self.area.y0, self.area.y1)] {
            if v.abs() < 1e-15 {
                if p < a || p > b {
                    return (max_range, max_range);
                }
            } else {
                let (t0, t1) = ((a - p) / v, (b - p) / v);
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
        }
        (lo, hi)
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_blocks(
        &self,
        f: &impl Fn(f64) -> f64,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        e0: f64,
        de: f64,
        start: f64,
        end: f64,
    ) -> Option<f64> {
        let px = o.x + d.x * start;
        let py = o.y + d.y * start;
        let mut i = (((px - self.area.x0) / BLOCK_SIZE).floor().max(0.0) as usize).min(self.nx - 1);
        let mut j = (((py - self.area.y0) / BLOCK_SIZE).floor().max(0.0) as usize).min(self.ny - 1);
        let axis = |v: f64, p: f64, origin: f64, idx: usize| -> (f64, f64) {
            if v > 0.0 {
                let edge = origin + (idx + 1) as f64 * BLOCK_SIZE;
                ((edge - p) / v + start, BLOCK_SIZE / v)
            } else if v < 0.0 {
                let edge = origin + idx as f64 * BLOCK_SIZE;
                ((edge - p) / v + start, -BLOCK_SIZE / v)
            } else {
                (f64::INFINITY, f64::INFINITY)
            }
        };
        let (mut next_x, dx) = axis(d.x, px, self.area.x0, i);
        let (mut next_y, dy) = axis(d.y, py, self.area.y0, j);
        let horizontal = d.x.hypot(d.y);
        let mut t = start;
        while t < end {
            let t_next = next_x.min(next_y).min(end).max(t);
            let top = self.block_max[j * self.nx + i];
            let (ea, eb) = (e0 + de * t, e0 + de * t_next);
            if ea.min(eb) <= top {
                // skip the part of the segment above the block maximum
                let from = if ea > top && de < 0.0 { t + (ea - top) / -de } else { t };
                // f changes at most this fast along the ray
                let rate = de.abs() + self.block_slope[j * self.nx + i] * horizontal;
                if let Some(hit) = self.march(f, from.min(t_next), t_next, rate) {
                    return Some(hit);
                }
            }
            t = t_next;
            if next_x <= next_y {
                if d.x > 0.0 && i + 1 < self.nx {
                    i += 1;
                } else if d.x < 0.0 && i > 0 {
                    i -= 1;
                } else {
                    break;
                }
                next_x += dx;
            } else {
                if d.y > 0.0 && j + 1 < self.ny {
                    j += 1;
                } else if d.y < 0.0 && j > 0 {
                    j -= 1;
                } else {
                    break;
                }
                next_y += dy;
            }
        }
        if t < end {
            return self.march(f, t, end, f64::INFINITY);
        }
        None
    }

    // Search on (a, b] assuming f(a) > 0, then bisection. Steps are the
    // fixed march step, or longer when `rate` bounds |df/dt| and the
    // clearance allows it.
    fn march(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64, rate: f64) -> Option<f64> {
        let mut t = a;
        let mut clearance = f64::NAN;
        while t < b {
            let safe = if rate.is_finite() && clearance > 0.0 { clearance / rate } else { 0.0 };
            let tn = (t + self.step.max(safe)).min(b);
            clearance = f(tn);
            if clearance <= 0.0 {
                return Some(bisect(f, t, tn));
            }
            t = tn;
        }
        None
    }

    /// Range image seen by a camera at `camera_pose` (sensor to inertial NED).
    pub fn render(&self, camera_pose: &Pose, intrinsics: &CameraIntrinsics, max_range: f64) -> RangeImage {
        let rays = pixel_rays(intrinsics);
        self.render_rays(camera_pose, &rays, intrinsics.width, intrinsics.height, max_range)
    }

    pub fn render_rays(
        &self,
        camera_pose: &Pose,
        rays: &[Vector3<f64>],
        width: usize,
        height: usize,
        max_range: f64,
    ) -> RangeImage {
        let r = camera_pose.rotation().matrix();
        let o = camera_pose.translation();
        let ranges = rays.iter().map(|ray| self.cast(o, &(r * ray), max_range)).collect();
        RangeImage { width, height, ranges }
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > BISECTION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unit sensor-frame rays for every pixel, row-major.
pub fn pixel_rays(intrinsics: &CameraIntrinsics) -> Vec<Vector3<f64>> {
    let mut rays = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            rays.push(intrinsics.ray(u, v));
        }
    }
    rays
}

/// One-off render: builds an acceleration grid around the camera.
pub fn raycast(
    field: &Heightfield,
    camera_pose: &Pose,
    intrinsics: &CameraIntrinsics,
    max_range: f64,
) -> RangeImage {
    assert!(max_range > 0.0, "max_range must be positive");
    let o = camera_pose.translation();
    Raycaster::around(field, o.x, o.y, max_range, DEFAULT_MARCH_STEP).render(camera_pose, intrinsics, max_range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::simworld::heightfield::{plateau_gap, wall};
    use proptest::prelude::*;

    fn down_camera(height: f64) -> Pose {
        // optical axis along NED +z
        Pose::exact(Vector3::new(0.0, 0.0, -height), Rotation::identity()).unwrap()
    }

    fn forward_camera(elevation: f64) -> Pose {
        // x right = east, y down, z forward = north
        let m = nalgebra::Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        Pose::exact(Vector3::new(0.0, 0.0, -elevation), Rotation::from_matrix(&m).unwrap()).unwrap()
    }

    #[test]
    fn flat_plane_from_above() {
        let k = CameraIntrinsics::from_fov(64, 48, 80.0).unwrap();
        let img = raycast(&Heightfield::flat(0.0), &down_camera(1.0), &k, 10.0);
        let center = img.at(32, 24);
        assert!((center - 1.0).abs() <= 1e-3, "{center}");
        for v in 0..48 {
            for u in 0..64 {
                let ray = k.ray(u, v);
                let oracle = 1.0 / ray.z;
                assert!((img.at(u, v) - oracle).abs() <= 2e-3);
            }
        }
    }

    #[test]
    fn horizontal_view_over_open_water() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 0.0, 4, 1).unwrap();
        let img = raycast(&Heightfield::flat(0.0), &forward_camera(1.0), &k, 10.0);
        assert!(img.ranges.iter().all(|r| r.is_infinite()));
    }

    #[test]
    fn wall_ahead() {
        let k = CameraIntrinsics::from_fov(33, 25, 60.0).unwrap();
        let img = raycast(&wall(2.5, 20.0), &forward_camera(1.0), &k, 10.0);
        assert!((img.at(16, 12) - 2.5).abs() <= 1e-3);
        for v in 0..25 {
            for u in 0..33 {
                let ray = k.ray(u, v);
                // the upper pixels see the wall; the lowest ones may hit the floor first
                let wall_t = 2.5 / ray.z;
                let floor_t = if ray.y > 0.0 { 1.0 / ray.y } else { f64::INFINITY };
                let oracle = wall_t.min(floor_t);
                assert!((img.at(u, v) - oracle).abs() <= 2e-3, "({u},{v}) {} vs {oracle}", img.at(u, v));
            }
        }
    }

    #[test]
    fn starting_below_ground_hits_at_zero() {
        let field = Heightfield::flat(0.0);
        let r = Raycaster::around(&field, 0.0, 0.0, 5.0, 0.01);
        assert_eq!(r.cast(&Vector3::new(0.0, 0.0, 0.5), &Vector3::new(1.0, 0.0, 0.0), 5.0), 0.0);
    }

    #[test]
    fn origin_outside_the_block_area() {
        let field = Heightfield::flat(0.0);
        let r = Raycaster::new(&field, Rect::new(-1.0, 1.0, -1.0, 1.0), 0.01);
        let d = Vector3::new(1.0, 0.0, 1.0).normalize();
        let t = r.cast(&Vector3::new(-3.0, 0.0, -1.0), &d, 10.0);
        assert!((t - 2f64.sqrt()).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn matches_plane_oracle(
            h in 0.3f64..3.0, pitch in 0.2f64..1.4, yaw in -3.0f64..3.0, x in -5.0f64..5.0, level in -1.0f64..1.0
        ) {
            let field = Heightfield::flat(level);
            let r = Raycaster::around(&field, x, 0.0, 10.0, 0.01);
            let d = Vector3::new(pitch.cos() * yaw.cos(), pitch.cos() * yaw.sin(), pitch.sin());
            let o = Vector3::new(x, 0.0, -(level + h));
            let t = r.cast(&o, &d, 10.0);
            let oracle = h / pitch.sin();
            if oracle <= 10.0 - 1e-3 {
                prop_assert!((t - oracle).abs() <= 2e-3, "{t} vs {oracle}");
            } else if oracle > 10.0 {
                prop_assert!(t.is_infinite());
            }
        }

        #[test]
        fn matches_step_oracle(d0 in 1.0f64..6.0, dir_z in -0.3f64..0.3, y in -2.0f64..2.0) {
            let field = wall(d0, 5.0);
            let r = Raycaster::around(&field, 0.0, y, 10.0, 0.01);
            let d = Vector3::new(1.0, 0.0, dir_z).normalize();
            let o = Vector3::new(0.0, y, -1.0);
            let t = r.cast(&o, &d, 10.0);
            let wall_t = d0 / d.x;
            let floor_t = if d.z > 0.0 { 1.0 / d.z } else { f64::INFINITY };
            let oracle = wall_t.min(floor_t);
            prop_assert!((t - oracle).abs() <= 2e-3, "{t} vs {oracle}");
        }

        #[test]
        fn skipping_agrees_with_plain_marching(
            x in 0.0f64..12.0, azimuth in -0.8f64..0.8, dip in 0.05f64..1.0
        ) {
            let field = plateau_gap();
            let fast = Raycaster::around(&field, x, 0.0, 10.0, 0.01);
            let plain = Raycaster::new(&field, Rect::new(1e3, 1e3 + 1.0, 1e3, 1e3 + 1.0), 0.01);
            let d = Vector3::new(dip.cos() * azimuth.cos(), dip.cos() * azimuth.sin(), dip.sin());
            let o = Vector3::new(x, 0.0, -1.0);
            let (a, b) = (fast.cast(&o, &d, 10.0), plain.cast(&o, &d, 10.0));
            prop_assert!(a == b || (a - b).abs() <= 2e-3, "{a} vs {b}");
        }
    }
}
