//! EGRID: multi-layer map grids.
//!
//! ```text
//! EGRID <cells_x> <cells_y> <resolution_m> <origin_x> <origin_y>\n
//! #v1 le height,height_variance,horizontal_variance,fused_height,h_min,h_max,observed\n
//! <7 layers of cells_x * cells_y little-endian f32, row-major (y outer)>
//! ```
//!
//! Unobserved cells hold NaN in every value layer and 0 in `observed`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::FormatError;

pub const GRID_MAGIC: &str = "EGRID";
pub const GRID_VERSION: u32 = 1;

/// Layer order on disk.
pub const LAYER_NAMES: [&str; 7] = [
    "height",
    "height_variance",
    "horizontal_variance",
    "fused_height",
    "h_min",
    "h_max",
    "observed",
];

// Upper bound on cells per grid to catch corrupt headers before allocating.
const MAX_CELLS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Height = 0,
    HeightVariance,
    HorizontalVariance,
    FusedHeight,
    HMin,
    HMax,
    Observed,
}

impl Layer {
    pub const ALL: [Layer; 7] = [
        Layer::Height,
        Layer::HeightVariance,
        Layer::HorizontalVariance,
        Layer::FusedHeight,
        Layer::HMin,
        Layer::HMax,
        Layer::Observed,
    ];

    pub fn name(self) -> &'static str {
        LAYER_NAMES[self as usize]
    }
}

/// Describes one on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatDescriptor {
    pub magic: &'static str,
    pub version: u32,
    pub little_endian: bool,
    pub layers: &'static [&'static str],
}

pub const GRID_FORMAT: FormatDescriptor = FormatDescriptor {
    magic: GRID_MAGIC,
    version: GRID_VERSION,
    little_endian: true,
    layers: &LAYER_NAMES,
};

/// Grid of per-cell layers in memory (f64), row-major with `x` fastest.
/// `origin_*` is the minimum corner of cell (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub cells_x: usize,
    pub cells_y: usize,
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub layers: [Vec<f64>; 7],
}

impl Grid {
    /// All cells unobserved.
    pub fn empty(cells_x: usize, cells_y: usize, resolution: f64, origin_x: f64, origin_y: f64) -> Self {
        let n = cells_x * cells_y;
        let mut layers: [Vec<f64>; 7] = std::array::from_fn(|_| vec![f64::NAN; n]);
        layers[Layer::Observed as usize] = vec![0.0; n];
        Self {
            cells_x,
            cells_y,
            resolution,
            origin_x,
            origin_y,
            layers,
        }
    }

    pub fn len(&self) -> usize {
        self.cells_x * self.cells_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, layer: Layer) -> &[f64] {
        &self.layers[layer as usize]
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut Vec<f64> {
        &mut self.layers[layer as usize]
    }

    pub fn observed(&self, index: usize) -> bool {
        self.layers[Layer::Observed as usize][index] != 0.0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.cells_x + ix
    }

    /// Center of cell `(ix, iy)`.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_x + (ix as f64 + 0.5) * self.resolution,
            self.origin_y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.cells_x == other.cells_x
            && self.cells_y == other.cells_y
            && self.resolution == other.resolution
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
    }

    pub fn header(&self) -> String {
        format!(
            "{} {} {} {} {} {}\n#v{} le {}\n",
            GRID_MAGIC,
            self.cells_x,
            self.cells_y,
            self.resolution,
            self.origin_x,
            self.origin_y,
            GRID_VERSION,
            LAYER_NAMES.join(",")
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(header.len() + self.len() * 4 * LAYER_NAMES.len());
        out.extend_from_slice(header.as_bytes());
        for layer in &self.layers {
            for &value in layer {
                out.extend_from_slice(&f32_bits(value).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let (line1, rest) = split_line(bytes).ok_or_else(|| header_err("missing header line"))?;
        let (line2, payload) = split_line(rest).ok_or_else(|| header_err("missing version line"))?;

        let fields: Vec<&str> = line1.split_whitespace().collect();
        if fields.first() != Some(&GRID_MAGIC) {
            return Err(FormatError::BadMagic {
                expected: GRID_MAGIC.into(),
                found: fields.first().unwrap_or(&"").to_string(),
            });
        }
        if fields.len() != 6 {
            return Err(header_err(&format!("expected 6 header fields, found {}", fields.len())));
        }
        let cells_x = parse_usize(fields[1], "cells_x")?;
        let cells_y = parse_usize(fields[2], "cells_y")?;
        let resolution = parse_f64(fields[3], "resolution")?;
        let origin_x = parse_f64(fields[4], "origin_x")?;
        let origin_y = parse_f64(fields[5], "origin_y")?;
        if !(resolution > 0.0) || !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(header_err("resolution must be positive and origin finite"));
        }

        let meta: Vec<&str> = line2.split_whitespace().collect();
        let version = meta
            .first()
            .and_then(|v| v.strip_prefix("#v"))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| header_err("malformed version line"))?;
        if version != GRID_VERSION {
            return Err(FormatError::UnsupportedVersion {
                format: GRID_MAGIC,
                version,
            });
        }
        if meta.get(1) != Some(&"le") {
            return Err(header_err("only little-endian payloads are supported"));
        }
        if meta.get(2).copied() != Some(LAYER_NAMES.join(",").as_str()) {
            return Err(header_err("unexpected layer list"));
        }

        let n = cells_x
            .checked_mul(cells_y)
            .filter(|&n| n <= MAX_CELLS)
            .ok_or(FormatError::DimensionOverflow { cells_x, cells_y })?;
        let expected = n * 4 * LAYER_NAMES.len();
        if payload.len() != expected {
            return Err(FormatError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        let mut chunks = payload.chunks_exact(4);
        let layers: [Vec<f64>; 7] = std::array::from_fn(|_| {
            (0..n)
                .map(|_| {
                    let c = chunks.next().unwrap();
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64
                })
                .collect()
        });
        Ok(Self {
            cells_x,
            cells_y,
            resolution,
            origin_x,
            origin_y,
            layers,
        })
    }
}

pub fn write_grid(grid: &Grid, path: &Path) -> Result<(), FormatError> {
    let mut file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    file.write_all(&grid.to_bytes()).map_err(|e| FormatError::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Grid, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Grid::from_bytes(&bytes)
}

fn f32_bits(value: f64) -> f32 {
    if value.is_nan() {
        f32::NAN
    } else {
        value as f32
    }
}

pub(crate) fn split_line(bytes: &[u8]) -> Option<(&str, &[u8])> {
    let end = bytes.iter().take(4096).position(|&b| b == b'\n')?;
    let line = std::str::from_utf8(&bytes[..end]).ok()?;
    Some((line, &bytes[end + 1..]))
}

fn header_err(msg: &str) -> FormatError {
    FormatError::BadHeader(msg.to_string())
}

pub(crate) fn parse_usize(s: &str, field: &str) -> Result<usize, FormatError> {
    s.parse()
        .map_err(|_| FormatError::BadHeader(format!("{field}: cannot parse '{s}' as an integer")))
}

fn parse_f64(s: &str, field: &str) -> Result<f64, FormatError> {
    s.parse()
        .map_err(|_| FormatError::BadHeader(format!("{field}: cannot parse '{s}' as a number")))
}
