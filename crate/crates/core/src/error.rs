use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("singular matrix (pivot {pivot:.3e} below threshold {threshold:.3e})")]
    Singular { pivot: f64, threshold: f64 },

    #[error("contour quadrature node hits the spectrum at grid node {node}")]
    ContourHitsSpectrum { node: usize },

    #[error("integration step failure at grid node {node}")]
    StepFailure { node: usize },

    #[error("boundary operator is not invertible: {0}")]
    NoUniqueSolution(String),

    #[error("fixed-point iteration did not converge in {iterations} iterations (last update {last_update:.3e})")]
    Divergence { iterations: usize, last_update: f64 },

    #[error("smoothing destroyed profile separation (min gap {gap:.4} at width {width:.3e})")]
    SeparationDestroyed { gap: f64, width: f64 },

    #[error("magnitude {magnitude} too small for a valid frame; need at least {required:.6}")]
    MagnitudeTooSmall { magnitude: f64, required: f64 },

    #[error("boundary vector is not in the range of the selected projector")]
    XiOutsideRange,

    #[error("spectral parameter must be nonzero")]
    LambdaZero,

    #[error("spectral parameter argument {arg:.6} lies outside sector {sector}")]
    LambdaOutsideSector { arg: f64, sector: usize },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
