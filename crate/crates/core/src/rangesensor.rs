//! Discrete range-class images as a range sensor.
//!
//! Each pixel carries a probability distribution over range classes (near,
//! mid-field, far, free space). Only the top pixel of every vertical run of
//! an obstacle class is turned into a 3D measurement, placed at that class's
//! representative range along the pixel ray. The distribution's spread
//! supplies the range variance.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability vectors must sum to one within this tolerance.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Shortest obstacle run (in pixels) that produces a measurement.
pub const DEFAULT_MIN_RUN: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("expected {expected} class probabilities, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("negative or non-finite probability {value}")]
    BadProbability { value: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: usize,
        v: usize,
        width: usize,
        height: usize,
    },
    #[error("class {0} is not an obstacle class")]
    NotObstacle(usize),
    #[error("invalid range-class scheme: {0}")]
    BadScheme(String),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("image has {image} classes but the scheme defines {scheme}")]
    ClassMismatch { image: usize, scheme: usize },
}

/// Range classes: the last class is free space, all others are obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeClassScheme {
    /// Range assigned to each class when back-projecting (meters).
    pub representative_ranges: Vec<f64>,
    /// Lower edge of each class; the last class is open above. The first
    /// edge is the minimum detection distance.
    pub bin_edges: Vec<f64>,
}

impl Default for RangeClassScheme {
    fn default() -> Self {
        Self {
            representative_ranges: vec![2.0, 3.0, 4.0, 5.0],
            bin_edges: vec![0.45, 2.0, 3.0, 4.0],
        }
    }
}

impl RangeClassScheme {
    pub fn new(representative_ranges: Vec<f64>, bin_edges: Vec<f64>) -> Result<Self, SensorError> {
        let scheme = Self {
            representative_ranges,
            bin_edges,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let n = self.representative_ranges.len();
        if n < 2 {
            return Err(SensorError::BadScheme(
                "need at least one obstacle class and a free-space class".into(),
            ));
        }
        if self.bin_edges.len() != n {
            return Err(SensorError::BadScheme(format!(
                "{} representative ranges but {} bin edges",
                n,
                self.bin_edges.len()
            )));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !self.representative_ranges.iter().all(|r| r.is_finite()) || !increasing(&self.representative_ranges) {
            return Err(SensorError::BadScheme(
                "representative ranges must be finite and strictly increasing".into(),
            ));
        }
        if !self.bin_edges.iter().all(|r| r.is_finite()) || !increasing(&self.bin_edges) {
            return Err(SensorError::BadScheme(
                "bin edges must be finite and strictly increasing".into(),
            ));
        }
        if self.bin_edges[0] < 0.0 {
            return Err(SensorError::BadScheme("minimum detection distance is negative".into()));
        }
        if self.representative_ranges[0] <= self.min_detection() {
            return Err(SensorError::BadScheme(
                "representative ranges must exceed the minimum detection distance".into(),
            ));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.representative_ranges.len()
    }

    pub fn min_detection(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn free_class(&self) -> usize {
        self.class_count() - 1
    }

    pub fn is_obstacle(&self, class: usize) -> bool {
        class < self.free_class()
    }

    /// Class of a true range. Ranges under the detection minimum clamp to the
    /// nearest class, infinity maps to free space.
    pub fn classify_range(&self, range: f64) -> usize {
        if range.is_nan() {
            return self.free_class();
        }
        // partition_point: first edge strictly greater than range.
        let above = self.bin_edges.partition_point(|&e| e <= range);
        above.saturating_sub(1)
    }

    pub fn max_variance(&self) -> f64 {
        let lo = self.representative_ranges[0];
        let hi = *self.representative_ranges.last().unwrap();
        (hi - lo).powi(2) / 4.0
    }
}

/// Mean and variance of the range implied by a class distribution.
pub fn pixel_range_moments(pdf: &[f64], scheme: &RangeClassScheme) -> Result<(f64, f64), SensorError> {
    check_pdf(pdf, scheme.class_count())?;
    Ok(moments_unchecked(pdf, &scheme.representative_ranges))
}

fn check_pdf(pdf: &[f64], classes: usize) -> Result<(), SensorError> {
    if pdf.len() != classes {
        return Err(SensorError::WrongLength {
            expected: classes,
            actual: pdf.len(),
        });
    }
    if let Some(&value) = pdf.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(SensorError::BadProbability { value });
    }
    let sum: f64 = pdf.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(SensorError::NotNormalized { sum });
    }
    Ok(())
}

pub(crate) fn moments_unchecked(pdf: &[f64], ranges: &[f64]) -> (f64, f64) {
    let mean: f64 = ranges.iter().zip(pdf).map(|(r, p)| r * p).sum();
    let variance = ranges
        .iter()
        .zip(pdf)
        .map(|(r, p)| (r - mean).powi(2) * p)
        .sum();
    (mean, variance)
}

/// Sensor covariance `diag(0, 0, variance)` in the ray frame, whose third
/// axis is the measurement ray.
pub fn sensor_covariance(variance: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, variance))
}

/// [`sensor_covariance`] rotated from the ray frame into the sensor frame:
/// `variance * d * d^T` for unit ray direction `d`.
pub fn ray_covariance(direction: &Vector3<f64>, variance: f64) -> Matrix3<f64> {
    let d = direction.normalize();
    d * d.transpose() * variance
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, SensorError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at `(width/2, height/2)`.
    pub fn from_fov(width: usize, height: usize, horizontal_fov_deg: f64) -> Result<Self, SensorError> {
        if !(horizontal_fov_deg > 0.0 && horizontal_fov_deg < 180.0) {
            return Err(SensorError::BadIntrinsics(format!(
                "horizontal field of view {horizontal_fov_deg} deg is outside (0, 180)"
            )));
        }
        let f = (width as f64 / 2.0) / (horizontal_fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, (width / 2) as f64, (height / 2) as f64, width, height)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(SensorError::BadIntrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SensorError::BadIntrinsics("image must be non-empty".into()));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= n as f64;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(SensorError::BadIntrinsics("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Unit ray through pixel `(u, v)` in the sensor frame.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 - self.cx) / self.fx,
            (v as f64 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }
}

/// Per-pixel class distributions, stored as class-major planes of row-major
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeClassImage {
    width: usize,
    height: usize,
    classes: usize,
    data: Vec<f64>,
}

impl RangeClassImage {
    /// Validates non-negativity and per-pixel normalization.
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self, SensorError> {
        let image = Self::new_unchecked(width, height, classes, data)?;
        let mut pdf = vec![0.0; classes];
        for v in 0..height {
            for u in 0..width {
                image.pdf_into(u, v, &mut pdf);
                check_pdf(&pdf, classes)?;
            }
        }
        Ok(image)
    }

    pub(crate) fn new_unchecked(
        width: usize,
        height: usize,
        classes: usize,
        data: Vec<f64>,
    ) -> Result<Self, SensorError> {
        let expected = width * height * classes;
        if data.len() != expected {
            return Err(SensorError::WrongLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    /// One-hot image from per-pixel class labels (row-major).
    pub fn from_labels(width: usize, height: usize, classes: usize, labels: &[usize]) -> Result<Self, SensorError> {
        let n = width * height;
        if labels.len() != n {
            return Err(SensorError::WrongLength {
                expected: n,
                actual: labels.len(),
            });
        }
        let mut data = vec![0.0; n * classes];
        for (i, &c) in labels.iter().enumerate() {
            if c >= classes {
                return Err(SensorError::WrongLength {
                    expected: classes,
                    actual: c + 1,
                });
            }
            data[c * n + i] = 1.0;
        }
        Self::new_unchecked(width, height, classes, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Raw class-major planes.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, class: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[class * n..(class + 1) * n]
    }

    pub fn probability(&self, class: usize, u: usize, v: usize) -> f64 {
        self.data[class * self.width * self.height + v * self.width + u]
    }

    pub fn pdf(&self, u: usize, v: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        self.pdf_into(u, v, &mut out);
        out
    }

    fn pdf_into(&self, u: usize, v: usize, out: &mut [f64]) {
        let n = self.width * self.height;
        let i = v * self.width + u;
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.data[c * n + i];
        }
    }

    /// Most probable class per pixel, row-major. Ties go to the lowest
    /// (nearest) class.
    pub fn argmax_labels(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut best = self.plane(0).to_vec();
        let mut labels = vec![0u8; n];
        for c in 1..self.classes {
            let plane = self.plane(c);
            for i in 0..n {
                if plane[i] > best[i] {
                    best[i] = plane[i];
                    labels[i] = c as u8;
                }
            }
        }
        labels
    }

    /// Mean range variance over every pixel of the frame.
    pub fn mean_range_variance(&self, scheme: &RangeClassScheme) -> f64 {
        let n = self.width * self.height;
        if n == 0 {
            return 0.0;
        }
        let mut pdf = vec![0.0; self.classes];
        let mut total = 0.0;
        for i in 0..n {
            for (c, slot) in pdf.iter_mut().enumerate() {
                *slot = self.data[c * n + i];
            }
            total += moments_unchecked(&pdf, &scheme.representative_ranges).1;
        }
        total / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPixel {
    pub u: usize,
    pub v: usize,
    pub class: usize,
}

/// Top pixel of every vertical obstacle-class run of at least `min_run`
/// pixels, column by column, top to bottom.
pub fn extract_boundary_pixels(
    image: &RangeClassImage,
    scheme: &RangeClassScheme,
    min_run: usize,
) -> Vec<BoundaryPixel> {
    let labels = image.argmax_labels();
    boundary_pixels_from_labels(&labels, image.width, image.height, scheme, min_run)
}

pub(crate) fn boundary_pixels_from_labels(
    labels: &[u8],
    width: usize,
    height: usize,
    scheme: &RangeClassScheme,
    min_run: usize,
) -> Vec<BoundaryPixel> {
    let mut out = Vec::new();
    let min_run = min_run.max(1);
    for u in 0..width {
        let mut v = 0;
        while v < height {
            let class = labels[v * width + u] as usize;
            let start = v;
            while v < height && labels[v * width + u] as usize == class {
                v += 1;
            }
            if scheme.is_obstacle(class) && v - start >= min_run {
                out.push(BoundaryPixel { u, v: start, class });
            }
        }
    }
    out
}

/// A back-projected measurement in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangePoint {
    pub point_s: Vector3<f64>,
    pub range_mean: f64,
    pub range_variance: f64,
    /// Lateral variance of the pixel footprint at this range.
    pub lateral_variance: f64,
    pub pixel: (usize, usize),
}

pub fn backproject(
    pixel: (usize, usize),
    class: usize,
    intrinsics: &CameraIntrinsics,
    scheme: &RangeClassScheme,
    pdf: &[f64],
) -> Result<RangePoint, SensorError> {
    let (u, v) = pixel;
    if u >= intrinsics.width || v >= intrinsics.height {
        return Err(SensorError::OutOfBounds {
            u,
            v,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    if !scheme.is_obstacle(class) {
        return Err(SensorError::NotObstacle(class));
    }
    let (range_mean, range_variance) = pixel_range_moments(pdf, scheme)?;
    let range = scheme.representative_ranges[class];
    // uniform pixel footprint, averaged over the two image axes
    let lateral_variance =
        range * range / 12.0 * 0.5 * (1.0 / (intrinsics.fx * intrinsics.fx) + 1.0 / (intrinsics.fy * intrinsics.fy));
    Ok(RangePoint {
        point_s: intrinsics.ray(u, v) * range,
        range_mean,
        range_variance,
        lateral_variance,
        pixel,
    })
}

/// Boundary extraction followed by back-projection.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSensor {
    pub intrinsics: CameraIntrinsics,
    pub scheme: RangeClassScheme,
    pub min_run: usize,
}

impl RangeSensor {
    pub fn new(intrinsics: CameraIntrinsics, scheme: RangeClassScheme) -> Self {
        Self {
            intrinsics,
            scheme,
            min_run: DEFAULT_MIN_RUN,
        }
    }

    pub fn sense(&self, image: &RangeClassImage) -> Result<Vec<RangePoint>, SensorError> {
        if image.classes() != self.scheme.class_count() {
            return Err(SensorError::ClassMismatch {
                image: image.classes(),
                scheme: self.scheme.class_count(),
            });
        }
        if image.width() != self.intrinsics.width || image.height() != self.intrinsics.height {
            return Err(SensorError::BadIntrinsics(format!(
                "image is {}x{} but the camera is {}x{}",
                image.width(),
                image.height(),
                self.intrinsics.width,
                self.intrinsics.height
            )));
        }
        let pixels = extract_boundary_pixels(image, &self.scheme, self.min_run);
        let mut pdf = vec![0.0; image.classes()];
        pixels
            .iter()
            .map(|b| {
                image.pdf_into(b.u, b.v, &mut pdf);
                backproject((b.u, b.v), b.class, &self.intrinsics, &self.scheme, &pdf)
            })
            .collect()
    }
}

pub fn sense(
    image: &RangeClassImage,
    intrinsics: &CameraIntrinsics,
    scheme: &RangeClassScheme,
) -> Result<Vec<RangePoint>, SensorError> {
    RangeSensor::new(*intrinsics, scheme.clone()).sense(image)
}
