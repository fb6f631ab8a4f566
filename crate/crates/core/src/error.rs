use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector shapes that do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed or empty input.
    #[error("invalid input: {0}")]
    Input(String),

    /// Input outside the mathematical domain of the operation
    /// (negative samples, infeasible moments, rates outside (0, 1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method failed to converge or lost accuracy.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The simulated or analysed closed loop is not stable.
    #[error("unstable system: {0}")]
    Unstable(String),

    /// The SDP solver failed during threshold bisection. The surviving
    /// bracket is carried along so callers can decide what to do with it.
    #[error("SDP solve failed at alpha = {alpha} (bracket [{lower}, {upper}]): {reason}")]
    Bisection {
        alpha: f64,
        lower: f64,
        upper: f64,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
