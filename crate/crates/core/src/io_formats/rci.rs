//! RCI: range-class images.
//!
//! ```text
//! RCI <width> <height> <classes>\n
//! <classes planes of width * height little-endian f32, row-major>
//! ```

use std::fs;
use std::path::Path;

use super::grid::{parse_usize, split_line};
use super::FormatError;
use crate::rangesensor::RangeClassImage;

pub const RCI_MAGIC: &str = "RCI";

const MAX_VALUES: usize = 1 << 28;

pub fn rci_to_bytes(image: &RangeClassImage) -> Vec<u8> {
    let header = format!("{} {} {} {}\n", RCI_MAGIC, image.width(), image.height(), image.classes());
    let mut out = Vec::with_capacity(header.len() + image.data().len() * 4);
    out.extend_from_slice(header.as_bytes());
    for &p in image.data() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

/// Parses and validates per-pixel normalization.
pub fn rci_from_bytes(bytes: &[u8]) -> Result<RangeClassImage, FormatError> {
    let (line, payload) = split_line(bytes).ok_or_else(|| FormatError::BadHeader("missing header line".into()))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.first() != Some(&RCI_MAGIC) {
        return Err(FormatError::BadMagic {
            expected: RCI_MAGIC.into(),
            found: fields.first().unwrap_or(&"").to_string(),
        });
    }
    if fields.len() != 4 {
        return Err(FormatError::BadHeader(format!(
            "expected 4 header fields, found {}",
            fields.len()
        )));
    }
    let width = parse_usize(fields[1], "width")?;
    let height = parse_usize(fields[2], "height")?;
    let classes = parse_usize(fields[3], "classes")?;
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(classes))
        .filter(|&n| n <= MAX_VALUES)
        .ok_or(FormatError::DimensionOverflow {
            cells_x: width,
            cells_y: height,
        })?;
    if payload.len() != n * 4 {
        return Err(FormatError::Truncated {
            expected: n * 4,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(RangeClassImage::new(width, height, classes, data)?)
}

pub fn write_rci(image: &RangeClassImage, path: &Path) -> Result<(), FormatError> {
    fs::write(path, rci_to_bytes(image)).map_err(|e| FormatError::io(path, e))
}

pub fn read_rci(path: &Path) -> Result<RangeClassImage, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    rci_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = RangeClassImage::new(2, 1, 4, vec![0.5, 0.0, 0.0, 0.25, 0.0, 0.25, 0.5, 0.5]).unwrap();
        let bytes = rci_to_bytes(&img);
        assert!(bytes.starts_with(b"RCI 2 1 4\n"));
        assert_eq!(rci_from_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn rejects_unnormalized_payload() {
        let mut bytes = b"RCI 1 1 4\n".to_vec();
        for p in [0.5f32, 0.5, 0.5, 0.0] {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        assert!(matches!(rci_from_bytes(&bytes), Err(FormatError::Sensor(_))));
    }

    #[test]
    fn rejects_truncation() {
        let img = RangeClassImage::from_labels(2, 2, 4, &[0, 1, 2, 3]).unwrap();
        let bytes = rci_to_bytes(&img);
        assert!(matches!(
            rci_from_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
    }
}
