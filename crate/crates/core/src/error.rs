use thiserror::Error;

#[derive(Debug, Error)]
pub enum HypError {
    #[error("quadrature did not converge after {segments} segments (estimate {estimate}, error {abs_err})")]
    QuadratureFailure { segments: usize, estimate: f64, abs_err: f64 },

    #[error("group enumeration truncated at word length {max_word_length} while searching radius {radius}")]
    EnumerationTruncated { radius: f64, max_word_length: usize },

    #[error("radial ODE residual {residual:e} exceeds tolerance {tolerance:e}")]
    OdeFailure { residual: f64, tolerance: f64 },

    #[error("band limit {band} too small: roundtrip sup error {sup_err:e} > {tolerance:e}")]
    BandTooSmall { band: f64, sup_err: f64, tolerance: f64 },

    #[error("lens volume {volume:e} below resolution")]
    DegenerateLens { volume: f64 },

    #[error("period bound not reached below k_max = {k_max}; violations (k, s): {violations:?}")]
    BoundNotReached { k_max: usize, violations: Vec<(usize, f64)> },

    #[error("eigen-data has no eigenfunction mesh")]
    NoMesh,

    #[error("quadrature Gram matrix deviates from identity by {deviation:e}")]
    GramDeviationTooLarge { deviation: f64 },

    #[error("Dirichlet domain is unbounded in direction {theta}")]
    UnboundedDomain { theta: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HypError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HypError::InvalidInput(msg.into()))
}
