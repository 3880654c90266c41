//! On-disk formats: map grids, range-class images, scenario configs, CSV
//! tables, heatmaps and run manifests.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rangesensor::SensorError;

pub mod config;
pub mod grid;
pub mod manifest;
pub mod pgm;
pub mod rci;
pub mod tables;

pub use config::{parse_config, read_config, ScenarioConfig};
pub use grid::{read_grid, write_grid, FormatDescriptor, Grid, Layer, GRID_FORMAT, GRID_MAGIC, GRID_VERSION};
pub use manifest::{sha256_hex, OutputRecord, RunManifest, StageTiming};
pub use pgm::{read_pgm16, write_heatmap, Heatmap};
pub use rci::{read_rci, write_rci};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected '{expected}', found '{found}'")]
    BadMagic { expected: String, found: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("dimensions {cells_x} x {cells_y} overflow the supported size")]
    DimensionOverflow { cells_x: usize, cells_y: usize },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("config{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Config { message: String, line: Option<usize> },
    #[error("config field '{field}'{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidField {
        field: String,
        message: String,
        line: Option<usize>,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the error comes from the content of a config file rather than
    /// from reading or decoding data.
    pub fn is_config(&self) -> bool {
        matches!(self, FormatError::Config { .. } | FormatError::InvalidField { .. })
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        FormatError::Csv(e.to_string())
    }
}
