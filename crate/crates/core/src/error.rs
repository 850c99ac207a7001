use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the support of its marginal distribution.
    #[error("value {value} is outside the support [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A kernel or marginal whose construction is mathematically degenerate.
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// Numerical failure, optionally attached to the group it occurred in.
    #[error("numerical failure{}: {message}", group.as_ref().map(|g| format!(" in group {g}")).unwrap_or_default())]
    Numerical {
        group: Option<String>,
        message: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn numerical(group: Option<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            group,
            message: message.into(),
        }
    }

    pub(crate) fn argument(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }

    /// Machine-readable category used in error artifacts.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Argument(_) => "argument",
            Error::Degenerate(_) => "degenerate",
            Error::Numerical { .. } => "numerical",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
