//! Scenario config: a TOML file with the sections `[world]`,
//! `[trajectory]`, `[camera]`, `[scheme]`, `[degradation]`, `[map]`,
//! `[noise]` and `[seed]`. Every key is optional and unknown keys are
//! rejected. An empty file is a valid config.
//!
//! Pose covariance is ordered `[tx ty tz, roll pitch yaw]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::elevmap::MapConfig;
use crate::rangesensor::{CameraIntrinsics, RangeClassScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldPreset {
    Flat,
    Wall,
    PlateauGap,
    Undulating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub preset: WorldPreset,
    /// Ray-march cutoff (m).
    pub max_range: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            preset: WorldPreset::Flat,
            max_range: 10.0,
        }
    }
}

/// Straight transect along +x at constant elevation (up-positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub start_x: f64,
    pub end_x: f64,
    pub y: f64,
    pub elevation: f64,
    pub step: f64,
    /// Seconds between poses.
    pub dt: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            start_x: 0.0,
            end_x: 12.0,
            y: 0.0,
            elevation: 1.0,
            step: 0.05,
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub horizontal_fov_deg: f64,
    /// Downward tilt of the forward-looking optical axis.
    pub tilt_deg: f64,
    /// Camera position in the base frame (m, NED body axes).
    pub offset: [f64; 3],
    /// Minimum vertical run length for a boundary pixel.
    pub min_run: usize,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            horizontal_fov_deg: 80.0,
            tilt_deg: 20.0,
            offset: [0.0; 3],
            min_run: crate::rangesensor::DEFAULT_MIN_RUN,
        }
    }
}

impl CameraSection {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, crate::rangesensor::SensorError> {
        CameraIntrinsics::from_fov(self.width, self.height, self.horizontal_fov_deg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSection {
    pub epsilon: f64,
    pub smear: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Per-step translation standard deviation (m).
    pub translation_sigma: f64,
    /// Per-step rotation standard deviation (degrees).
    pub rotation_sigma_deg: f64,
    /// Perturb the odometry with samples drawn from the covariance.
    pub sample: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            translation_sigma: 0.01,
            rotation_sigma_deg: 0.2,
            sample: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    pub value: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub world: WorldSection,
    pub trajectory: TrajectorySection,
    pub camera: CameraSection,
    pub scheme: RangeClassScheme,
    pub degradation: DegradationSection,
    pub map: MapConfig,
    pub noise: NoiseSection,
    pub seed: SeedSection,
}

impl ScenarioConfig {
    /// Checks every field, reporting the first failure.
    pub fn validate(&self) -> Result<(), FormatError> {
        self.validate_with_source("")
    }

    fn validate_with_source(&self, source: &str) -> Result<(), FormatError> {
        let fail = |section: &str, key: &str, message: String| FormatError::InvalidField {
            field: format!("{section}.{key}"),
            message,
            line: locate(source, section, key),
        };
        let positive = |section: &str, key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(fail(section, key, format!("must be positive and finite, got {v}")))
            }
        };
        let finite = |section: &str, key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(fail(section, key, format!("must be finite, got {v}")))
            }
        };
        let nonnegative = |section: &str, key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(fail(section, key, format!("must be non-negative and finite, got {v}")))
            }
        };

        positive("world", "max_range", self.world.max_range)?;

        let t = &self.trajectory;
        finite("trajectory", "start_x", t.start_x)?;
        finite("trajectory", "end_x", t.end_x)?;
        finite("trajectory", "y", t.y)?;
        finite("trajectory", "elevation", t.elevation)?;
        positive("trajectory", "step", t.step)?;
        positive("trajectory", "dt", t.dt)?;
        if ((t.end_x - t.start_x).abs() / t.step) > 1e6 {
            return Err(fail("trajectory", "step", "more than 10^6 poses".into()));
        }

        let c = &self.camera;
        if c.width == 0 || c.height == 0 || c.width > 16384 || c.height > 16384 {
            let key = if c.width == 0 || c.width > 16384 { "width" } else { "height" };
            return Err(fail("camera", key, format!("must be in 1..=16384, got {}x{}", c.width, c.height)));
        }
        if !(c.horizontal_fov_deg > 0.0 && c.horizontal_fov_deg < 180.0) {
            return Err(fail(
                "camera",
                "horizontal_fov_deg",
                format!("must be in (0, 180), got {}", c.horizontal_fov_deg),
            ));
        }
        if !(c.tilt_deg.abs() < 90.0) {
            return Err(fail("camera", "tilt_deg", format!("must be in (-90, 90), got {}", c.tilt_deg)));
        }
        for v in c.offset {
            finite("camera", "offset", v)?;
        }
        if c.min_run == 0 {
            return Err(fail("camera", "min_run", "must be at least 1".into()));
        }

        if let Err(e) = self.scheme.validate() {
            let key = if e.to_string().contains("edge") {
                "bin_edges"
            } else {
                "representative_ranges"
            };
            return Err(fail("scheme", key, e.to_string()));
        }

        let d = &self.degradation;
        if !(0.0..=1.0).contains(&d.epsilon) {
            return Err(fail("degradation", "epsilon", format!("must be in [0, 1], got {}", d.epsilon)));
        }
        if d.smear > 64 {
            return Err(fail("degradation", "smear", format!("must be at most 64, got {}", d.smear)));
        }

        positive("map", "resolution", self.map.resolution)?;
        positive("map", "length_x", self.map.length_x)?;
        positive("map", "length_y", self.map.length_y)?;
        if let Err(e) = self.map.cells() {
            return Err(fail("map", "resolution", e.to_string()));
        }

        nonnegative("noise", "translation_sigma", self.noise.translation_sigma)?;
        nonnegative("noise", "rotation_sigma_deg", self.noise.rotation_sigma_deg)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates config text. Errors carry 1-based line numbers.
pub fn parse_config(source: &str) -> Result<ScenarioConfig, FormatError> {
    let config: ScenarioConfig = toml::from_str(source).map_err(|e| FormatError::Config {
        message: e.message().to_string(),
        line: e.span().map(|s| line_of(source, s.start)),
    })?;
    config.validate_with_source(source)?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<ScenarioConfig, FormatError> {
    let source = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_config(&source)
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

// Line of `key = ...` inside `[section]`, found by a plain text scan.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim() == key {
                return Some(i + 1);
            }
        }
    }
    None
}
