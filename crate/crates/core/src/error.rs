//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Grid would exceed the configured point budget.
    #[error("grid capacity exceeded: {m}^{d} = {points} points exceeds budget {budget}")]
    GridCapacity {
        m: usize,
        d: usize,
        points: u128,
        budget: usize,
    },

    /// A parameter fails a precondition; `name` identifies the field.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A window whose squared kernel weights sum to zero cannot be standardized.
    #[error("degenerate window: sum of squared kernel weights is zero")]
    DegenerateWindow,

    /// A kernel failed a validity requirement (e.g. non-positive mean).
    #[error("invalid kernel: {0}")]
    KernelValidity(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature failed: {0}")]
    Quadrature(String),

    /// A stored calibration does not match the requested context.
    #[error("calibration context mismatch on `{field}`: stored {stored}, expected {expected}")]
    ContextMismatch {
        field: &'static str,
        stored: String,
        expected: String,
    },

    /// A persisted file is malformed or fails its checksum.
    #[error("file integrity: {0}")]
    Integrity(String),

    /// CSV input is malformed at a specific row (1-based, header is row 1).
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    /// CSV input does not cover the grid; cites the first absent coordinate.
    #[error("csv input is missing grid point at ({coordinate})")]
    MissingGridPoint { coordinate: String },

    /// Data cannot be banded (e.g. every window at an interior point unusable).
    #[error("data error: {0}")]
    Data(String),

    /// A region predicate selected no grid points.
    #[error("region contains no usable grid points")]
    EmptyRegion,

    /// Width prediction requested where the local curvature constant vanishes.
    #[error("zero curvature at evaluation point: {0}")]
    ZeroCurvature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
