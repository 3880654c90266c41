//! CSV tables. Every table starts with a fixed header row; numbers use the
//! shortest representation that round-trips through `f64`, NaN is `NaN`.

use std::path::Path;

use super::FormatError;

pub const CROSS_SECTION_HEADER: [&str; 7] = ["axis", "value", "coord", "h_est", "h_min", "h_max", "h_true"];
pub const METRICS_HEADER: [&str; 7] = ["region", "cells", "max_error", "mean_error", "rmse", "coverage", "observed_fraction"];
pub const SWEEP_HEADER: [&str; 6] = [
    "epsilon",
    "mean_range_variance",
    "rmse",
    "coverage",
    "corridor_rmse",
    "corridor_coverage",
];
pub const STEPS_HEADER: [&str; 9] = [
    "step",
    "time",
    "x",
    "y",
    "elevation",
    "points",
    "fused",
    "out_of_grid",
    "mean_range_variance",
];

/// Formats a number for CSV output.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parses column `name` as numbers.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>, FormatError> {
        let c = self
            .column(name)
            .ok_or_else(|| FormatError::Csv(format!("missing column '{name}'")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse::<f64>()
                    .map_err(|_| FormatError::Csv(format!("column '{name}': cannot parse '{}'", r[c])))
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| FormatError::Csv(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }
}

pub fn write_table(table: &Table, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, table.to_bytes()?).map_err(|e| FormatError::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Table, FormatError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Table::from_bytes(&bytes)
}
