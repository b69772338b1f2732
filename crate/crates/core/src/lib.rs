//! Top-down semantic mapping from egocentric depth and semantic frames.
//!
//! Frames rendered along a known-pose trajectory are projected onto a 2 cm
//! floor grid and fused into a per-cell spatial memory that is decoded into a
//! semantic map. Three map-construction paradigms are provided (project
//! features then decode, segment then project, project then segment) along
//! with segmentation metrics, an object-goal planner and counting QA that run
//! on the resulting maps. Synthetic box scenes and a ray caster supply
//! observations and ground truth.

pub mod error;
pub mod experiment;
pub mod formats;
pub mod geometry;
pub mod imgproc;
pub mod memory;
pub mod metrics;
pub mod nav;
pub mod noise;
pub mod pipelines;
pub mod qa;
pub mod rng;
pub mod scene;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Cell, GridSpec, Pose, WorldPoint};
pub use imgproc::{BinaryRaster, LabelRaster, Raster};
pub use memory::{Aggregator, SpatialMemory};
pub use scene::{EgoFrame, SceneModel, Trajectory};

/// Void plus the twelve object classes.
pub const NUM_CLASSES: usize = 13;

/// Class names indexed by class id; id 0 is void (floor, background and
/// anything outside the object list).
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "void",
    "chair",
    "table",
    "cushion",
    "cabinet",
    "shelving",
    "sink",
    "dresser",
    "plant",
    "bed",
    "sofa",
    "counter",
    "fireplace",
];

/// Top-down semantic map: one class id per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub grid: GridSpec,
    pub labels: LabelRaster,
}

impl SemanticMap {
    pub fn void(grid: GridSpec) -> Self {
        SemanticMap {
            grid,
            labels: Raster::new(grid.u_size, grid.v_size, 0),
        }
    }

    #[inline]
    pub fn label(&self, (u, v): Cell) -> u8 {
        self.labels.get(u, v)
    }
}

#[cfg(feature = "parallel")]
pub(crate) mod par {
    pub use rayon::prelude::*;
}
