//! Robot-centric elevation mapping from coarse range-class images.
//!
//! A camera-mounted classifier assigns each pixel a probability over a few
//! discrete range classes (near, mid, far, free space). The top pixel of
//! every obstacle run is back-projected along its ray with the class-pdf
//! mean and variance, and the resulting heights are fused into a grid that
//! moves with the robot.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod elevmap;
pub mod evaluate;
pub mod geometry;
pub mod io_formats;
pub mod rangesensor;
pub mod simworld;

pub use elevmap::{update_cell, ElevationMap, FusedMap, MapCell, MapConfig, ScanStats};
pub use geometry::{FrameGraph, GeometryError, Pose, Rotation};
pub use io_formats::{FormatError, Grid, ScenarioConfig};
pub use rangesensor::{CameraIntrinsics, RangeClassImage, RangeClassScheme, RangePoint, RangeSensor, SensorError};
