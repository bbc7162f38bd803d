use thiserror::Error;

/// Errors raised by operator construction, mesh assembly, time integration
/// and the experiment driver.
#[derive(Debug, Error)]
pub enum SbpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported derivative degree p = {0} (supported: 1..=4)")]
    UnsupportedDegree(usize),

    #[error("boundary blocks overlap: 2*{bp} > {n}")]
    BlocksOverlap { bp: usize, n: usize },

    #[error("operator construction infeasible: {0}")]
    ConstructionInfeasible(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("projection infeasible: relative residual {residual:.3e} for degree {degree}")]
    ProjectionInfeasible { degree: usize, residual: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("instability detected at t = {t}")]
    InstabilityDetected { t: f64 },

    #[error("operator dimension {dim} exceeds dense eigensolver limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("max-CFL search failed: {0}")]
    SearchFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SbpError {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SbpError::InvalidArgument(_)
                | SbpError::UnsupportedDegree(_)
                | SbpError::Configuration(_)
                | SbpError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SbpError>;
