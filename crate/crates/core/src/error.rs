use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every solver module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A trajectory left the finite floating-point range or violated a
    /// runtime guard; `t` is the integration time of the offending step.
    #[error("divergence at t = {t}: {detail}")]
    Divergence { t: f64, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
