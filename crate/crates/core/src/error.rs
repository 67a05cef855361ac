use thiserror::Error;

/// Errors produced anywhere in the reachability pipeline.
#[derive(Debug, Error)]
pub enum SlrError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported dimension n = {0} (polar parameterization needs n >= 2)")]
    UnsupportedDimension(usize),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("metric distance gradient is singular at the ellipsoid center")]
    SingularGradient,

    #[error("degenerate flow: sensitivity matrix at the center is singular (det = {det:e})")]
    DegenerateFlow { det: f64 },

    #[error("a-priori enclosure could not be validated near t = {t}")]
    EnclosureFailure { t: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("result schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlrError>;
