//! Synthetic underwater world: procedural terrain, straight transects, a
//! ray-cast camera producing range-class images, and the end-to-end mapping
//! loop used for evaluation.

use thiserror::Error;

use crate::elevmap::MapError;
use crate::geometry::GeometryError;
use crate::rangesensor::SensorError;

pub mod degradation;
pub mod heightfield;
pub mod raycast;
pub mod scenario;
pub mod trajectory;

pub use degradation::{classify, DegradationModel};
pub use heightfield::{Feature, Heightfield, Rect, Region};
pub use raycast::{raycast, RangeImage, Raycaster};
pub use scenario::{run_scenario, run_scenarios, CameraRig, FrameLatency, PoseNoise, Scenario, ScenarioResult, StepLog};
pub use trajectory::{TimedPose, Trajectory};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("inconsistent scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Map(#[from] MapError),
}
