use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OnnError {
    #[error("matrix must be at least 1x1")]
    EmptyMatrix,
    #[error("expected {expected} entries for a {dim}x{dim} matrix, got {got}")]
    ShapeMismatch {
        dim: usize,
        expected: usize,
        got: usize,
    },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is singular (pivot {pivot:e} in column {col})")]
    SingularMatrix { col: usize, pivot: f64 },
    #[error("Lyapunov system is singular; drift matrix is not stable")]
    UnstableSystem,
    #[error("need at least 2 samples, got {0}")]
    EmptySample(usize),
    #[error("reference inverse entry ({row}, {col}) = {value:e} is too close to zero for a relative error")]
    ZeroReferenceEntry { row: usize, col: usize, value: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (min pivot {min_pivot:e})")]
    NotPositiveDefinite { min_pivot: f64 },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("noise parameter Kn must be positive, got {0}")]
    NonPositiveNoiseParameter(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid of {points}^{dim} cells exceeds cap of {cap}")]
    GridTooLarge { points: usize, dim: usize, cap: u64 },
    #[error("Boltzmann density normalization underflowed to zero")]
    DegenerateDensity,
    #[error("step dt*K*lambda_max = {ratio:.3} is not below 2; Euler-Maruyama would be unstable")]
    UnstableStep { ratio: f64 },
    #[error("trajectory diverged at step {step} (|phi| = {magnitude:e})")]
    Diverged { step: u64, magnitude: f64 },
    #[error("could not draw a well-conditioned SPD matrix after {0} attempts")]
    RejectionLimit(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, OnnError>;
