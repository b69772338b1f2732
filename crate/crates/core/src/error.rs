use std::io;

use thiserror::Error;

/// Errors produced anywhere in the mapping engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({i}, {j}) outside {width}x{height} image")]
    PixelOutOfBounds {
        i: f64,
        j: f64,
        width: usize,
        height: usize,
    },
    #[error("point is behind the camera (camera-frame depth {0})")]
    BehindCamera(f64),
    #[error("cell ({u}, {v}) outside the {u_size}x{v_size} grid")]
    CellOutOfGrid {
        u: i64,
        v: i64,
        u_size: usize,
        v_size: usize,
    },
    #[error("could not place box {placed} of {requested} after {tries} tries")]
    InfeasiblePlacement {
        placed: usize,
        requested: usize,
        tries: usize,
    },
    #[error("scene has no free space for the agent")]
    NoFreeSpace,
    #[error("raster {width}x{height} not divisible by factor {factor}")]
    DimsNotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("no cell was observed")]
    EmptyObservation,
    #[error("empty input")]
    EmptyInput,
    #[error("memory holds no observations")]
    NoObservations,
    #[error("no path to goal")]
    NoPath,
    #[error("start cell is not free")]
    StartBlocked,
    #[error("answer table for class {0} is empty")]
    EmptyTable(u8),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
