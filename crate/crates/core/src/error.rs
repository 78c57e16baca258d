use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Fewer retained samples than unknown coefficients.
    #[error("not identifiable: {retained} retained samples for {required} coefficients")]
    Identifiability { retained: usize, required: usize },

    #[error("ill-conditioned normal equations (condition estimate {cond:e})")]
    IllConditioned { cond: f64 },

    /// The center sample carries the whole fit, so its deleted residual is undefined.
    #[error("degenerate leverage c = {c}")]
    DegenerateLeverage { c: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure at window {window}: {reason}")]
    Numerical { window: usize, reason: String },
}
