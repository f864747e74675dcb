use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {point:?} lies outside the parameter domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("posterior mass underflow; increase resolution or reduce nβ (log Z = {log_z})")]
    Underflow { log_z: f64 },

    #[error("level set {{K <= {eps}}} is empty on the requested support")]
    EmptyLevelSet { eps: f64 },

    #[error("derivative order {requested} exceeds the configured cap {cap}")]
    OrderCap { requested: u32, cap: u32 },

    #[error("SGLD chain diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("chain has no samples after burn-in (length {length}, burn-in {burn_in})")]
    EmptyChain { length: usize, burn_in: usize },

    #[error("covariance cancellation check failed: naive {naive:e} vs centered {centered:e}")]
    Cancellation { naive: f64, centered: f64 },

    #[error("integral did not converge: {0}")]
    Nonconvergence(String),

    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),

    #[error("matrix entry ({row}, {col}) failed: {source}")]
    Entry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
