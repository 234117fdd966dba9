use thiserror::Error;

/// Errors raised by model construction, numerics and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("numerically singular: {0}")]
    NumericalSingularity(String),

    #[error("{count} supports exceed the enumeration limit of {limit}; {hint}")]
    Intractable {
        count: f64,
        limit: f64,
        hint: &'static str,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Dimension { .. } => 2,
            Error::NotPositiveDefinite(_)
            | Error::NumericalSingularity(_)
            | Error::Intractable { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}
