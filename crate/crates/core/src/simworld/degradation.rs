//! Range-class images from true ranges: binning, blending toward the
//! uniform pdf, and spatial smearing.

use serde::{Deserialize, Serialize};

use super::raycast::RangeImage;
use super::SimError;
use crate::rangesensor::{RangeClassImage, RangeClassScheme};

/// Flattens class pdfs: `pdf' = (1 - epsilon) pdf + epsilon uniform`, then
/// averages pdfs over a `(2 smear + 1)^2` window clipped to the image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationModel {
    pub epsilon: f64,
    pub smear: usize,
}

impl DegradationModel {
    pub fn new(epsilon: f64, smear: usize) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(SimError::Config(format!("epsilon {epsilon} is outside [0, 1]")));
        }
        Ok(Self { epsilon, smear })
    }
}

/// One-hot class labels of the true ranges.
pub fn bin_ranges(ranges: &RangeImage, scheme: &RangeClassScheme) -> Vec<u8> {
    ranges.ranges.iter().map(|&r| scheme.classify_range(r) as u8).collect()
}

pub fn classify(ranges: &RangeImage, scheme: &RangeClassScheme, model: &DegradationModel) -> RangeClassImage {
    classify_labels(&bin_ranges(ranges, scheme), ranges.width, ranges.height, scheme.class_count(), model)
}

/// Same as [`classify`] starting from precomputed labels.
pub fn classify_labels(
    labels: &[u8],
    width: usize,
    height: usize,
    classes: usize,
    model: &DegradationModel,
) -> RangeClassImage {
    let n = width * height;
    let eps = model.epsilon;
    let keep = 1.0 - eps;
    let floor = eps / classes as f64;
    let mut data = vec![floor; n * classes];
    for (i, &c) in labels.iter().enumerate() {
        data[c as usize * n + i] = keep + floor;
    }
    if model.smear > 0 {
        for plane in data.chunks_exact_mut(n) {
            box_blur(plane, width, height, model.smear);
        }
    }
    RangeClassImage::new_unchecked(width, height, classes, data).expect("sizes match")
}

// Separable mean filter with windows clipped at the borders.
fn box_blur(plane: &mut [f64], width: usize, height: usize, k: usize) {
    let mut tmp = vec![0.0; plane.len()];
    let mut prefix = vec![0.0; width.max(height) + 1];
    for v in 0..height {
        let row = &plane[v * width..(v + 1) * width];
        for u in 0..width {
            prefix[u + 1] = prefix[u] + row[u];
        }
        for u in 0..width {
            let (a, b) = (u.saturating_sub(k), (u + k + 1).min(width));
            tmp[v * width + u] = (prefix[b] - prefix[a]) / (b - a) as f64;
        }
    }
    for u in 0..width {
        for v in 0..height {
            prefix[v + 1] = prefix[v] + tmp[v * width + u];
        }
        for v in 0..height {
            let (a, b) = (v.saturating_sub(k), (v + k + 1).min(height));
            plane[v * width + u] = (prefix[b] - prefix[a]) / (b - a) as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(ranges: Vec<f64>, width: usize) -> RangeImage {
        let height = ranges.len() / width;
        RangeImage { width, height, ranges }
    }

    #[test]
    fn one_hot_examples() {
        let s = RangeClassScheme::default();
        let m = DegradationModel::default();
        let img = classify(&image(vec![1.0, 10.0, f64::INFINITY, 0.1], 4), &s, &m);
        assert_eq!(img.pdf(0, 0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(img.pdf(1, 0), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(img.pdf(2, 0), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(img.pdf(3, 0), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_blend_is_uniform() {
        let s = RangeClassScheme::default();
        let m = DegradationModel::new(1.0, 0).unwrap();
        let img = classify(&image(vec![1.0, 2.5, 3.5, 7.0], 2), &s, &m);
        for v in 0..2 {
            for u in 0..2 {
                assert_eq!(img.pdf(u, v), vec![0.25; 4]);
            }
        }
        assert_eq!(img.mean_range_variance(&s), 1.25);
        assert!(DegradationModel::new(1.01, 0).is_err());
        assert!(DegradationModel::new(-0.01, 0).is_err());
    }

    #[test]
    fn classification_inverts_binning() {
        let s = RangeClassScheme::default();
        let ranges: Vec<f64> = (0..1200).map(|i| i as f64 * 0.005).collect();
        let img = classify(&image(ranges.clone(), 40), &s, &DegradationModel::default());
        let labels = img.argmax_labels();
        for (i, &r) in ranges.iter().enumerate() {
            let expected = s.bin_edges.iter().rposition(|&e| r >= e).unwrap_or(0);
            assert_eq!(labels[i] as usize, expected, "range {r}");
            assert_eq!(img.plane(expected)[i], 1.0);
        }
    }

    #[test]
    fn smear_averages_clipped_windows() {
        let s = RangeClassScheme::default();
        let m = DegradationModel::new(0.0, 1).unwrap();
        // 3x1 image: near, free, free
        let img = classify(&image(vec![1.0, 9.0, 9.0], 3), &s, &m);
        assert!((img.probability(0, 0, 0) - 0.5).abs() < 1e-15);
        assert!((img.probability(0, 1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(img.probability(0, 2, 0), 0.0);
        for u in 0..3 {
            let total: f64 = img.pdf(u, 0).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
