//! Map-versus-truth comparison: error maps, cross-sections, confidence-bound
//! coverage, per-region metrics and degradation sweeps.
//!
//! Estimated maps are grids carrying the fused layers; truth grids carry
//! their heights in the `height` layer. Statistics only cover observed cells.

use thiserror::Error;

use crate::io_formats::config::ScenarioConfig;
use crate::io_formats::{Grid, Layer};
use crate::simworld::{run_scenarios, DegradationModel, Heightfield, Scenario, ScenarioResult, SimError};

/// Half-width of the metric strip around the transect line (m).
pub const CORRIDOR_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("grid geometry differs: estimate {0}, truth {1}")]
    GridMismatch(String, String),
    #[error("{axis} = {value} lies outside the grid")]
    OutOfGrid { axis: Axis, value: f64 },
    #[error("epsilon {0} is outside [0, 1]")]
    BadEpsilon(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub rmse: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Self {
        let (mut count, mut max, mut sum, mut sq) = (0usize, 0.0f64, 0.0, 0.0);
        for e in errors {
            count += 1;
            max = max.max(e);
            sum += e;
            sq += e * e;
        }
        if count == 0 {
            return Self::default();
        }
        Self {
            count,
            max,
            mean: sum / count as f64,
            rmse: (sq / count as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub cells_x: usize,
    pub cells_y: usize,
    /// `|fused - truth|` per observed cell, NaN elsewhere.
    pub errors: Vec<f64>,
    pub mask: Vec<bool>,
    pub stats: ErrorStats,
}

impl ErrorMap {
    /// Statistics over the observed cells accepted by `keep(index)`.
    pub fn stats_where(&self, keep: impl Fn(usize) -> bool) -> ErrorStats {
        ErrorStats::from_errors((0..self.errors.len()).filter(|&i| self.mask[i] && keep(i)).map(|i| self.errors[i]))
    }
}

fn check_geometry(estimate: &Grid, truth: &Grid) -> Result<(), EvalError> {
    if estimate.same_geometry(truth) {
        Ok(())
    } else {
        let describe = |g: &Grid| format!("{}x{} cells of {} m at ({}, {})", g.cells_x, g.cells_y, g.resolution, g.origin_x, g.origin_y);
        Err(EvalError::GridMismatch(describe(estimate), describe(truth)))
    }
}

pub fn error_map(estimate: &Grid, truth: &Grid) -> Result<ErrorMap, EvalError> {
    check_geometry(estimate, truth)?;
    let est = estimate.layer(Layer::FusedHeight);
    let tru = truth.layer(Layer::Height);
    let mut errors = vec![f64::NAN; estimate.len()];
    let mut mask = vec![false; estimate.len()];
    for i in 0..estimate.len() {
        if estimate.observed(i) && !est[i].is_nan() {
            errors[i] = (est[i] - tru[i]).abs();
            mask[i] = true;
        }
    }
    let stats = ErrorStats::from_errors((0..errors.len()).filter(|&i| mask[i]).map(|i| errors[i]));
    Ok(ErrorMap {
        cells_x: estimate.cells_x,
        cells_y: estimate.cells_y,
        errors,
        mask,
        stats,
    })
}

fn in_bounds(estimate: &Grid, truth: &Grid, i: usize) -> Option<bool> {
    let h = estimate.layer(Layer::FusedHeight)[i];
    if !estimate.observed(i) || h.is_nan() {
        return None;
    }
    let t = truth.layer(Layer::Height)[i];
    Some(t >= estimate.layer(Layer::HMin)[i] && t <= estimate.layer(Layer::HMax)[i])
}

/// Fraction of observed cells whose true height lies in `[h_min, h_max]`;
/// zero when nothing is observed.
pub fn bounds_coverage(estimate: &Grid, truth: &Grid) -> Result<f64, EvalError> {
    bounds_coverage_where(estimate, truth, |_| true)
}

pub fn bounds_coverage_where(estimate: &Grid, truth: &Grid, keep: impl Fn(usize) -> bool) -> Result<f64, EvalError> {
    check_geometry(estimate, truth)?;
    let (mut inside, mut total) = (0usize, 0usize);
    for i in 0..estimate.len() {
        if !keep(i) {
            continue;
        }
        if let Some(ok) = in_bounds(estimate, truth, i) {
            total += 1;
            inside += ok as usize;
        }
    }
    Ok(if total == 0 { 0.0 } else { inside as f64 / total as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionSample {
    pub coord: f64,
    pub h_est: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub h_true: f64,
}

impl SectionSample {
    pub fn contains_truth(&self) -> bool {
        self.h_true >= self.h_min && self.h_true <= self.h_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub axis: Axis,
    /// Requested coordinate of the fixed axis.
    pub value: f64,
    /// Center of the extracted cell row or column.
    pub line: f64,
    pub samples: Vec<SectionSample>,
}

impl CrossSection {
    /// Fraction of samples with the truth inside the bounds.
    pub fn coverage(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.contains_truth()).count() as f64 / self.samples.len() as f64
    }
}

/// Observed cells of the row (`axis = Y`, fixed y) or column (`axis = X`)
/// nearest to `value`, ordered by the free coordinate.
pub fn cross_section(estimate: &Grid, truth: &Grid, axis: Axis, value: f64) -> Result<CrossSection, EvalError> {
    check_geometry(estimate, truth)?;
    let (origin, n) = match axis {
        Axis::Y => (estimate.origin_y, estimate.cells_y),
        Axis::X => (estimate.origin_x, estimate.cells_x),
    };
    let f = (value - origin) / estimate.resolution;
    if !(f >= 0.0 && f < n as f64) {
        return Err(EvalError::OutOfGrid { axis, value });
    }
    let fixed = f.floor() as usize;
    let count = match axis {
        Axis::Y => estimate.cells_x,
        Axis::X => estimate.cells_y,
    };
    let mut samples = Vec::new();
    let mut line = 0.0;
    for k in 0..count {
        let (ix, iy) = match axis {
            Axis::Y => (k, fixed),
            Axis::X => (fixed, k),
        };
        let i = estimate.index(ix, iy);
        let (x, y) = estimate.cell_center(ix, iy);
        line = if axis == Axis::Y { y } else { x };
        let h = estimate.layer(Layer::FusedHeight)[i];
        if !estimate.observed(i) || h.is_nan() {
            continue;
        }
        samples.push(SectionSample {
            coord: if axis == Axis::Y { x } else { y },
            h_est: h,
            h_min: estimate.layer(Layer::HMin)[i],
            h_max: estimate.layer(Layer::HMax)[i],
            h_true: truth.layer(Layer::Height)[i],
        });
    }
    Ok(CrossSection {
        axis,
        value,
        line,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub region: String,
    /// Cells of the region inside the grid.
    pub cells: usize,
    pub stats: ErrorStats,
    pub coverage: f64,
    pub observed_fraction: f64,
}

/// Metrics over the grid cells whose centers satisfy `inside(x, y)`.
pub fn region_metrics(
    estimate: &Grid,
    truth: &Grid,
    name: &str,
    inside: impl Fn(f64, f64) -> bool,
) -> Result<RegionMetrics, EvalError> {
    let errors = error_map(estimate, truth)?;
    let mut member = vec![false; estimate.len()];
    for iy in 0..estimate.cells_y {
        for ix in 0..estimate.cells_x {
            let (x, y) = estimate.cell_center(ix, iy);
            member[estimate.index(ix, iy)] = inside(x, y);
        }
    }
    let cells = member.iter().filter(|&&m| m).count();
    let stats = errors.stats_where(|i| member[i]);
    let coverage = bounds_coverage_where(estimate, truth, |i| member[i])?;
    Ok(RegionMetrics {
        region: name.to_string(),
        cells,
        stats,
        coverage,
        observed_fraction: if cells == 0 { 0.0 } else { stats.count as f64 / cells as f64 },
    })
}

/// `all`, `corridor` (within [`CORRIDOR_HALF_WIDTH`] of the transect line
/// `y = transect_y`) and every named region of the heightfield.
pub fn standard_metrics(
    estimate: &Grid,
    truth: &Grid,
    field: &Heightfield,
    transect_y: f64,
) -> Result<Vec<RegionMetrics>, EvalError> {
    let mut out = vec![
        region_metrics(estimate, truth, "all", |_, _| true)?,
        region_metrics(estimate, truth, "corridor", |_, y| (y - transect_y).abs() <= CORRIDOR_HALF_WIDTH)?,
    ];
    for name in field.region_names() {
        out.push(region_metrics(estimate, truth, &name, |x, y| field.in_region(&name, x, y))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_range_variance: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub corridor_rmse: f64,
    pub corridor_coverage: f64,
}

pub fn sweep_row(result: &ScenarioResult, transect_y: f64) -> Result<SweepRow, EvalError> {
    let est = result.map_grid();
    let all = region_metrics(&est, &result.truth, "all", |_, _| true)?;
    let corridor = region_metrics(&est, &result.truth, "corridor", |_, y| {
        (y - transect_y).abs() <= CORRIDOR_HALF_WIDTH
    })?;
    Ok(SweepRow {
        epsilon: result.epsilon,
        mean_range_variance: result.mean_range_variance(),
        rmse: all.stats.rmse,
        coverage: all.coverage,
        corridor_rmse: corridor.stats.rmse,
        corridor_coverage: corridor.coverage,
    })
}

/// One scenario run per epsilon (other settings from `config`), rows in
/// input order.
pub fn degradation_sweep(config: &ScenarioConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>, EvalError> {
    if let Some(&bad) = epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(EvalError::BadEpsilon(bad));
    }
    let scenario = Scenario::from_config(config)?;
    let models: Vec<DegradationModel> = epsilons
        .iter()
        .map(|&e| DegradationModel::new(e, config.degradation.smear))
        .collect::<Result<_, _>>()?;
    run_scenarios(&scenario, &models)?
        .iter()
        .map(|r| sweep_row(r, config.trajectory.y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grids(heights: &[f64], variance: f64) -> (Grid, Grid) {
        let n = heights.len();
        let mut est = Grid::empty(n, 1, 0.1, 0.0, -0.05);
        let mut tru = Grid::empty(n, 1, 0.1, 0.0, -0.05);
        for (i, &h) in heights.iter().enumerate() {
            est.layer_mut(Layer::FusedHeight)[i] = h;
            est.layer_mut(Layer::HMin)[i] = h - 2.0 * variance.sqrt();
            est.layer_mut(Layer::HMax)[i] = h + 2.0 * variance.sqrt();
            est.layer_mut(Layer::Observed)[i] = 1.0;
            tru.layer_mut(Layer::Height)[i] = h;
        }
        (est, tru)
    }

    #[test]
    fn identical_maps_have_zero_error() {
        let (est, tru) = grids(&[0.0, 0.5, -1.0], 0.01);
        let e = error_map(&est, &tru).unwrap();
        assert!(e.errors.iter().all(|&v| v == 0.0));
        assert_eq!(e.stats.count, 3);
        assert_eq!(bounds_coverage(&est, &tru).unwrap(), 1.0);
    }

    #[test]
    fn uniform_shift() {
        let (mut est, tru) = grids(&[0.0, 0.5, -1.0], 0.0);
        for h in est.layer_mut(Layer::FusedHeight).iter_mut() {
            *h += 0.1;
        }
        let e = error_map(&est, &tru).unwrap();
        assert!(e.errors.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        // bounds collapsed onto the unshifted heights still hold the truth
        assert_eq!(bounds_coverage(&est, &tru).unwrap(), 1.0);
        for h in est.layer_mut(Layer::HMin).iter_mut() {
            *h += 0.1;
        }
        for h in est.layer_mut(Layer::HMax).iter_mut() {
            *h += 0.1;
        }
        assert_eq!(bounds_coverage(&est, &tru).unwrap(), 0.0);
    }

    #[test]
    fn unobserved_cells_are_excluded() {
        let (mut est, tru) = grids(&[0.0, 9.0], 0.0);
        est.layer_mut(Layer::Observed)[1] = 0.0;
        est.layer_mut(Layer::FusedHeight)[1] = f64::NAN;
        let e = error_map(&est, &tru).unwrap();
        assert_eq!(e.stats.count, 1);
        assert_eq!(e.stats.max, 0.0);
        assert!(e.errors[1].is_nan());
    }

    #[test]
    fn mismatched_grids_rejected() {
        let (est, _) = grids(&[0.0, 1.0], 0.0);
        let (_, tru) = grids(&[0.0, 1.0, 2.0], 0.0);
        assert!(matches!(error_map(&est, &tru), Err(EvalError::GridMismatch(..))));
        assert!(bounds_coverage(&est, &tru).is_err());
    }

    #[test]
    fn cross_section_examples() {
        let (est, tru) = grids(&[0.2; 5], 0.01);
        let s = cross_section(&est, &tru, Axis::Y, 0.0).unwrap();
        assert_eq!(s.samples.len(), 5);
        assert!(s.samples.iter().all(|p| p.h_est == 0.2 && p.contains_truth()));
        assert!(s.samples.windows(2).all(|w| w[1].coord > w[0].coord));
        assert!(matches!(cross_section(&est, &tru, Axis::Y, 3.0), Err(EvalError::OutOfGrid { .. })));
        assert!(cross_section(&est, &tru, Axis::X, -0.01).is_err());
    }

    #[test]
    fn sweep_rejects_bad_epsilon() {
        assert!(matches!(
            degradation_sweep(&ScenarioConfig::default(), &[0.0, 1.5]),
            Err(EvalError::BadEpsilon(_))
        ));
    }

    fn arb_grid() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>)> {
        (1usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(-2.0f64..2.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    fn build(est_h: &[f64], tru_h: &[f64], sig: &[f64], obs: &[bool]) -> (Grid, Grid) {
        let n = est_h.len();
        let mut est = Grid::empty(n, 1, 0.1, 0.0, 0.0);
        let mut tru = Grid::empty(n, 1, 0.1, 0.0, 0.0);
        for i in 0..n {
            tru.layer_mut(Layer::Height)[i] = tru_h[i];
            if obs[i] {
                est.layer_mut(Layer::FusedHeight)[i] = est_h[i];
                est.layer_mut(Layer::HMin)[i] = est_h[i] - sig[i];
                est.layer_mut(Layer::HMax)[i] = est_h[i] + sig[i];
                est.layer_mut(Layer::Observed)[i] = 1.0;
            }
        }
        (est, tru)
    }

    proptest! {
        #[test]
        fn error_map_properties((a, b, s, o) in arb_grid()) {
            let (est, tru) = build(&a, &b, &s, &o);
            let e = error_map(&est, &tru).unwrap();
            let (est2, tru2) = build(&b, &a, &s, &o);
            let e2 = error_map(&est2, &tru2).unwrap();
            for i in 0..a.len() {
                if e.mask[i] {
                    prop_assert!(e.errors[i] >= 0.0);
                    prop_assert_eq!(e.errors[i], e2.errors[i]);
                }
            }
            let (same, same_t) = build(&a, &a, &s, &o);
            prop_assert!(error_map(&same, &same_t).unwrap().errors.iter().all(|v| v.is_nan() || *v == 0.0));
            let c = bounds_coverage(&est, &tru).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            // wide bounds saturate
            let wide = vec![10.0; a.len()];
            let (w, wt) = build(&a, &b, &wide, &o);
            let cw = bounds_coverage(&w, &wt).unwrap();
            prop_assert!(cw == 1.0 || !o.iter().any(|&x| x));
            // the row section agrees with the error map and coverage
            let sec = cross_section(&est, &tru, Axis::Y, 0.05).unwrap();
            let observed: Vec<usize> = (0..a.len()).filter(|&i| o[i]).collect();
            prop_assert_eq!(sec.samples.len(), observed.len());
            for (smp, &i) in sec.samples.iter().zip(&observed) {
                prop_assert!(((smp.h_est - smp.h_true).abs() - e.errors[i]).abs() <= 1e-12);
            }
            prop_assert!((sec.coverage() - c).abs() <= 1e-12);
        }
    }
}
