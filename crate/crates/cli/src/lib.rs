//! Command implementations behind the `reefmap` binary.
//!
//! Exit codes: 0 success, 2 usage or config, 3 I/O or format, 4 numeric
//! failure. The seed comes from the config, then `REEFMAP_SEED`, then
//! `--seed`, later sources overriding earlier ones.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use reefmap::evaluate::{cross_section, error_map, standard_metrics, Axis, EvalError, RegionMetrics, SweepRow};
use reefmap::io_formats::manifest::MANIFEST_FILE;
use reefmap::io_formats::tables::{fmt_num, Table, CROSS_SECTION_HEADER, METRICS_HEADER, STEPS_HEADER, SWEEP_HEADER};
use reefmap::io_formats::{parse_config, sha256_hex, FormatError, Grid, Heatmap, Layer, RunManifest, ScenarioConfig};
use reefmap::simworld::scenario::preset;
use reefmap::simworld::{run_scenario, Scenario, ScenarioResult, SimError};

pub const SEED_ENV: &str = "REEFMAP_SEED";
pub const MAP_FILE: &str = "map.egrid";
pub const TRUTH_FILE: &str = "truth.egrid";
pub const STEPS_FILE: &str = "steps.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const VARIANCE_FILE: &str = "variance.pgm";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CROSS_SECTION_FILE: &str = "cross_section.csv";
pub const ERROR_MAP_FILE: &str = "error_map.pgm";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Sensor(_) | SimError::Map(_) => CliError::Config(e.to_string()),
            SimError::Geometry(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BadEpsilon(_) | EvalError::OutOfGrid { .. } => CliError::Usage(e.to_string()),
            EvalError::GridMismatch(..) => CliError::Io(e.to_string()),
            EvalError::Sim(s) => s.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "reefmap", version, about = "Robot-centric elevation mapping from range-class images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write maps, truth, step log and manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's degradation epsilon.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Compare a simulate run against its truth grid.
    Evaluate {
        /// Run directory written by `simulate`.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated y values for cross-sections along x
        /// (default: the transect line).
        #[arg(long)]
        sections: Option<String>,
    },
    /// Degradation sweep over a comma-separated epsilon list.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-stage latency of the map update over the config's trajectory.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate { config, out, seed, eps } => simulate(&config, &out, seed, eps).map(|s| {
            println!(
                "{} frames, {} observed cells -> {}",
                s.frames,
                s.observed_cells,
                out.display()
            );
        }),
        Command::Evaluate { out, sections } => parse_list(sections.as_deref())
            .and_then(|s| evaluate(&out, s.as_deref()))
            .map(|rows| {
                for m in rows {
                    println!(
                        "{:<12} cells {:>7} max {:.3} rmse {:.3} coverage {:.3}",
                        m.region, m.stats.count, m.stats.max, m.stats.rmse, m.coverage
                    );
                }
            }),
        Command::Sweep { config, out, eps, seed } => parse_list(eps.as_deref()).and_then(|e| {
            let eps = e.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
            sweep(&config, &out, &eps, seed).map(|rows| {
                for r in rows {
                    println!(
                        "eps {:.3} variance {:.6} rmse {:.4} coverage {:.3}",
                        r.epsilon, r.mean_range_variance, r.rmse, r.coverage
                    );
                }
            })
        }),
        Command::Bench { config, seed } => bench(&config, seed).map(|r| print!("{}", r.render())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("reefmap: {e}");
            e.exit_code()
        }
    }
}

fn parse_list(text: Option<&str>) -> Result<Option<Vec<f64>>, CliError> {
    let Some(text) = text else { return Ok(None) };
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("'{s}' is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Reads and validates a config, then applies the seed precedence.
pub fn load_config(path: &Path, seed_flag: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Ok(env) = std::env::var(SEED_ENV) {
        config.seed.value = env
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{env}' is not an unsigned integer")))?;
    }
    if let Some(seed) = seed_flag {
        config.seed.value = seed;
    }
    Ok(config)
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn write(out: &Path, name: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = out.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    manifest.record_output(name, bytes);
    Ok(())
}

fn write_heatmap(out: &Path, name: &str, layer: &str, map: &Heatmap, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (pgm, side) = reefmap::io_formats::write_heatmap(map, layer, &out.join(name))?;
    manifest.record_output(name, &pgm);
    manifest.record_output(&format!("{name}.txt"), &side);
    Ok(())
}

fn check_finite(grid: &Grid) -> Result<(), CliError> {
    for layer in [Layer::Height, Layer::HeightVariance, Layer::FusedHeight] {
        let bad = (0..grid.len()).find(|&i| grid.observed(i) && !grid.layer(layer)[i].is_finite());
        if let Some(i) = bad {
            return Err(CliError::Numeric(format!("{} is not finite at cell {i}", layer.name())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateSummary {
    pub frames: usize,
    pub observed_cells: usize,
}

/// `simulate`: writes `map.egrid` (raw and fused layers), `truth.egrid`,
/// `steps.csv`, the effective `config.toml`, a height-variance heatmap and
/// `manifest.json` into `out`.
pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>, eps: Option<f64>) -> Result<SimulateSummary, CliError> {
    let mut config = load_config(config_path, seed)?;
    if let Some(e) = eps {
        config.degradation.epsilon = e;
        config.validate()?;
    }
    let text = config.to_toml();
    let scenario = Scenario::from_config(&config)?;
    let clock = Instant::now();
    let result = run_scenario(&scenario)?;
    let elapsed = clock.elapsed().as_secs_f64();

    let grid = result.map_grid();
    check_finite(&grid)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("simulate", &text, config.seed.value);
    write(out, CONFIG_FILE, text.as_bytes(), &mut manifest)?;
    write(out, MAP_FILE, &grid.to_bytes(), &mut manifest)?;
    write(out, TRUTH_FILE, &result.truth.to_bytes(), &mut manifest)?;
    write(out, STEPS_FILE, &steps_table(&result).to_bytes()?, &mut manifest)?;

    let variance: Vec<f64> = (0..grid.len())
        .map(|i| if grid.observed(i) { grid.layer(Layer::HeightVariance)[i] } else { f64::NAN })
        .collect();
    let vmax = variance.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let heat = Heatmap::from_values(grid.cells_x, grid.cells_y, &variance, 0.0, vmax);
    write_heatmap(out, VARIANCE_FILE, Layer::HeightVariance.name(), &heat, &mut manifest)?;

    let t = &result.times;
    for (stage, seconds) in [
        ("total", elapsed),
        ("raycast", t.raycast),
        ("classify", t.classify),
        ("sense", t.sense),
        ("motion_update", t.motion_update),
        ("integrate_scan", t.integrate_scan),
        ("fuse", t.fuse),
    ] {
        manifest.record_timing(stage, seconds);
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(SimulateSummary {
        frames: result.logs.len(),
        observed_cells: result.map.observed_count(),
    })
}

fn steps_table(result: &ScenarioResult) -> Table {
    let mut table = Table::new(&STEPS_HEADER);
    for l in &result.logs {
        table.push(vec![
            l.step.to_string(),
            fmt_num(l.time),
            fmt_num(l.x),
            fmt_num(l.y),
            fmt_num(l.elevation),
            l.stats.points.to_string(),
            l.stats.fused.to_string(),
            l.stats.out_of_grid.to_string(),
            fmt_num(l.mean_range_variance),
        ]);
    }
    table
}

fn read_verified(dir: &Path, name: &str, manifest: &RunManifest) -> Result<Vec<u8>, CliError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if let Some(rec) = manifest.outputs.iter().find(|o| o.path == name) {
        if rec.sha256 != sha256_hex(&bytes) {
            return Err(CliError::Io(format!("{}: contents do not match {MANIFEST_FILE}", path.display())));
        }
    }
    Ok(bytes)
}

/// `evaluate`: reads a `simulate` run directory and adds `metrics.csv`,
/// `cross_section.csv` and an error heatmap to it. `sections` are y values
/// of cross-sections along x.
pub fn evaluate(dir: &Path, sections: Option<&[f64]>) -> Result<Vec<RegionMetrics>, CliError> {
    let clock = Instant::now();
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest::read(&manifest_path)?;
    let config_text = String::from_utf8(read_verified(dir, CONFIG_FILE, &manifest)?)
        .map_err(|_| CliError::Config(format!("{CONFIG_FILE} is not UTF-8")))?;
    let config = parse_config(&config_text)?;
    let estimate = Grid::from_bytes(&read_verified(dir, MAP_FILE, &manifest)?)
        .map_err(|e| CliError::Io(format!("{MAP_FILE}: {e}")))?;
    let truth = Grid::from_bytes(&read_verified(dir, TRUTH_FILE, &manifest)?)
        .map_err(|e| CliError::Io(format!("{TRUTH_FILE}: {e}")))?;

    let field = preset(config.world.preset);
    let transect = config.trajectory.y;
    let metrics = standard_metrics(&estimate, &truth, &field, transect)?;
    let mut table = Table::new(&METRICS_HEADER);
    for m in &metrics {
        table.push(vec![
            m.region.clone(),
            m.cells.to_string(),
            fmt_num(m.stats.max),
            fmt_num(m.stats.mean),
            fmt_num(m.stats.rmse),
            fmt_num(m.coverage),
            fmt_num(m.observed_fraction),
        ]);
    }
    write(dir, METRICS_FILE, &table.to_bytes()?, &mut manifest)?;

    let default_sections = [transect];
    let mut table = Table::new(&CROSS_SECTION_HEADER);
    for &y in sections.unwrap_or(&default_sections) {
        let section = cross_section(&estimate, &truth, Axis::Y, y)?;
        for s in &section.samples {
            table.push(vec![
                section.axis.to_string(),
                fmt_num(y),
                fmt_num(s.coord),
                fmt_num(s.h_est),
                fmt_num(s.h_min),
                fmt_num(s.h_max),
                fmt_num(s.h_true),
            ]);
        }
    }
    write(dir, CROSS_SECTION_FILE, &table.to_bytes()?, &mut manifest)?;

    let errors = error_map(&estimate, &truth)?;
    let values: Vec<f64> = errors
        .errors
        .iter()
        .zip(&errors.mask)
        .map(|(&e, &m)| if m { e } else { f64::NAN })
        .collect();
    let emax = if errors.stats.count > 0 { errors.stats.max } else { 0.0 };
    let heat = Heatmap::from_values(errors.cells_x, errors.cells_y, &values, 0.0, emax);
    write_heatmap(dir, ERROR_MAP_FILE, "abs_height_error", &heat, &mut manifest)?;

    manifest.timings.retain(|t| t.stage != "evaluate");
    manifest.record_timing("evaluate", clock.elapsed().as_secs_f64());
    manifest.write(&manifest_path)?;
    Ok(metrics)
}

/// `sweep`: one lockstep run per epsilon, written to `sweep.csv`.
pub fn sweep(config_path: &Path, out: &Path, epsilons: &[f64], seed: Option<u64>) -> Result<Vec<SweepRow>, CliError> {
    if epsilons.is_empty() {
        return Err(CliError::Usage("empty epsilon list".into()));
    }
    let config = load_config(config_path, seed)?;
    let text = config.to_toml();
    let clock = Instant::now();
    let rows = reefmap::evaluate::degradation_sweep(&config, epsilons)?;
    let elapsed = clock.elapsed().as_secs_f64();
    if let Some(r) = rows.iter().find(|r| !r.mean_range_variance.is_finite()) {
        return Err(CliError::Numeric(format!("mean range variance at eps {} is not finite", r.epsilon)));
    }

    create_dir(out)?;
    let mut manifest = RunManifest::new("sweep", &text, config.seed.value);
    write(out, CONFIG_FILE, text.as_bytes(), &mut manifest)?;
    let mut table = Table::new(&SWEEP_HEADER);
    for r in &rows {
        table.push(
            [r.epsilon, r.mean_range_variance, r.rmse, r.coverage, r.corridor_rmse, r.corridor_coverage]
                .into_iter()
                .map(fmt_num)
                .collect(),
        );
    }
    write(out, SWEEP_FILE, &table.to_bytes()?, &mut manifest)?;
    manifest.record_timing("sweep", elapsed);
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(rows)
}

/// Median and 95th percentile of one stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub median: f64,
    pub p95: f64,
}

impl Latency {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            return Self { median: f64::NAN, p95: f64::NAN };
        }
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        // nearest rank
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self { median, p95: s[rank - 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub map_cells: (usize, usize),
    pub image: (usize, usize),
    pub sense: Latency,
    pub motion_update: Latency,
    pub integrate_scan: Latency,
    /// sense + motion_update + integrate_scan per frame.
    pub map_update: Latency,
    /// Fusion of the final map, repeated once per frame.
    pub fuse: Latency,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "frames {}  map {}x{}  image {}x{}\n{:<16} {:>10} {:>10}\n",
            self.frames, self.map_cells.0, self.map_cells.1, self.image.0, self.image.1, "stage", "median_ms", "p95_ms"
        );
        for (name, l) in [
            ("sense", self.sense),
            ("motion_update", self.motion_update),
            ("integrate_scan", self.integrate_scan),
            ("map_update", self.map_update),
            ("fuse", self.fuse),
        ] {
            s += &format!("{:<16} {:>10.3} {:>10.3}\n", name, l.median * 1e3, l.p95 * 1e3);
        }
        s
    }
}

/// `bench`: runs the scenario once, timing the map-update stages of every
/// frame, then times `fuse` on the final map as many times as there were
/// frames.
pub fn bench(config_path: &Path, seed: Option<u64>) -> Result<BenchReport, CliError> {
    let config = load_config(config_path, seed)?;
    let scenario = Scenario::from_config(&config)?;
    let result = run_scenario(&scenario)?;
    let lat = &result.latencies;
    let pick = |f: fn(&reefmap::simworld::FrameLatency) -> f64| lat.iter().map(f).collect::<Vec<_>>();
    let fuse: Vec<f64> = (0..lat.len())
        .map(|_| {
            let clock = Instant::now();
            std::hint::black_box(result.map.fuse());
            clock.elapsed().as_secs_f64()
        })
        .collect();
    Ok(BenchReport {
        frames: lat.len(),
        map_cells: (result.map.cells_x(), result.map.cells_y()),
        image: (scenario.camera.intrinsics.width, scenario.camera.intrinsics.height),
        sense: Latency::of(&pick(|l| l.sense)),
        motion_update: Latency::of(&pick(|l| l.motion_update)),
        integrate_scan: Latency::of(&pick(|l| l.integrate_scan)),
        map_update: Latency::of(&pick(|l| l.map_update())),
        fuse: Latency::of(&fuse),
    })
}
