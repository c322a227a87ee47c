use thiserror::Error;

/// A time integral whose kernel contribution does not decay.
///
/// Reported instead of a number whenever a zero mode survives under `Γ`
/// and an infinite-time integral would diverge.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    /// indices of offending eigenvalues (within kernel tolerance)
    pub kernel_modes: Vec<usize>,
    /// Γ-energy carried by those modes
    pub gamma_energy: f64,
    pub context: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("vertex count {n} exceeds the configured cap {cap}")]
    ResourceLimit { n: usize, cap: usize },

    #[error("kernel collision: {0} (request kernel projection to proceed)")]
    KernelCollision(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("divergent time integral: {}", .0.context)]
    Divergence(DivergenceReport),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("hypothesis violation: {0}")]
    HypothesisViolation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
