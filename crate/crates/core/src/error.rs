use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are grouped by what the caller can do about them; the CLI
/// maps them onto exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input to an operation (shape mismatch, non-positive
    /// parameter, asymmetric matrix, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Bad or missing configuration (missing column, missing file flag).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that cannot be used (negative counts, empty event file).
    #[error("data error: {0}")]
    Data(String),

    /// A density was evaluated outside its support.
    #[error("out of support: {0}")]
    OutOfSupport(String),

    /// Numerical failure (singular matrix, non-PD factorization).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("newton iteration did not converge after {iterations} iterations (|grad|_inf = {grad_norm:e})")]
    NewtonNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::OutOfSupport(_) | Error::Numeric(_) | Error::NewtonNonConvergence { .. } => 4,
        }
    }

    /// True for failures that originate in Newton mode finding.
    pub fn is_newton_failure(&self) -> bool {
        matches!(self, Error::NewtonNonConvergence { .. })
    }
}

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
