use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of bounds for {n_rows}x{n_cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed sparse structure: {0}")]
    Structure(String),

    #[error("matrix is singular (pivot {pivot:e} at step {step})")]
    Singular { step: usize, pivot: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("zero diagonal entry at row {0}")]
    ZeroDiagonal(usize),

    #[error("strong threshold {0} outside (0, 1]")]
    InvalidTheta(f64),

    #[error("interpolation failure: F-point {0} has strong connections but no coarse interpolatory point")]
    Interpolation(usize),

    #[error("preconditioner is not SPD-consistent: <r, M^-1 r> = {value:e} at iteration {iteration}")]
    IndefinitePreconditioner { iteration: usize, value: f64 },

    #[error("point ({x}, {y}) lies on a tile interface")]
    OnInterface { x: f64, y: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
