//! 16-bit binary PGM heatmaps with a text sidecar recording the scaling.
//!
//! Gray 0 marks cells without a value; gray `g` in 1..=65535 encodes
//! `min + (g - 1) / 65534 * (max - min)`.

use std::path::Path;

use super::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<u16>,
    pub min: f64,
    pub max: f64,
}

impl Heatmap {
    /// Scales `values` (row-major, NaN = no value) onto 1..=65535. Rows are
    /// flipped so that +y points up in the image.
    pub fn from_values(width: usize, height: usize, values: &[f64], min: f64, max: f64) -> Self {
        assert_eq!(values.len(), width * height);
        let span = (max - min).max(f64::MIN_POSITIVE);
        let mut gray = vec![0u16; values.len()];
        for iy in 0..height {
            for ix in 0..width {
                let v = values[iy * width + ix];
                if v.is_nan() {
                    continue;
                }
                let t = ((v - min) / span).clamp(0.0, 1.0);
                gray[(height - 1 - iy) * width + ix] = 1 + (t * 65534.0).round() as u16;
            }
        }
        Self {
            width,
            height,
            gray,
            min,
            max,
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for g in &self.gray {
            out.extend_from_slice(&g.to_be_bytes());
        }
        out
    }

    pub fn sidecar(&self, layer: &str) -> String {
        format!(
            "layer {layer}\nmin {}\nmax {}\nunobserved 0\ngray = 1 + round((value - min) / (max - min) * 65534)\nrows top to bottom = decreasing y\n",
            self.min, self.max
        )
    }
}

/// Writes `<path>` and `<path>.txt`, returning both byte buffers.
pub fn write_heatmap(map: &Heatmap, layer: &str, path: &Path) -> Result<(Vec<u8>, Vec<u8>), FormatError> {
    let pgm = map.to_pgm();
    let side = map.sidecar(layer).into_bytes();
    std::fs::write(path, &pgm).map_err(|e| FormatError::io(path, e))?;
    let side_path = path.with_extension("pgm.txt");
    std::fs::write(&side_path, &side).map_err(|e| FormatError::io(&side_path, e))?;
    Ok((pgm, side))
}

/// Reads a 16-bit binary PGM: `(width, height, gray)`.
pub fn read_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), FormatError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::BadHeader("short PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(FormatError::BadMagic {
            expected: "P5".into(),
            found: fields[0].clone(),
        });
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FormatError::BadHeader(format!("bad PGM number '{s}'")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 65535 {
        return Err(FormatError::BadHeader(format!("expected maxval 65535, got {maxval}")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(2))
        .ok_or(FormatError::DimensionOverflow { cells_x: w, cells_y: h })?;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let gray = payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, gray))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_and_round_trip() {
        let m = Heatmap::from_values(2, 2, &[0.0, 1.0, f64::NAN, 0.5], 0.0, 1.0);
        // row y=1 is written first
        assert_eq!(m.gray, vec![0, 32768, 1, 65535]);
        let (w, h, g) = read_pgm16(&m.to_pgm()).unwrap();
        assert_eq!((w, h, g), (2, 2, m.gray.clone()));
        assert!(m.sidecar("error").contains("max 1"));
    }

    #[test]
    fn rejects_truncated() {
        let m = Heatmap::from_values(3, 1, &[0.0, 1.0, 2.0], 0.0, 2.0);
        let bytes = m.to_pgm();
        assert!(matches!(read_pgm16(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { .. })));
    }
}
