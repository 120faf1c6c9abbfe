use thiserror::Error;

/// Errors raised by the simulation engine and its analysis tools.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid. The first field names the offending key.
    #[error("invalid config `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An internal consistency check failed during a run.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A fit could not be performed on the supplied data.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse(_) | Error::Domain(_) => 2,
            Error::Invariant(_) => 3,
            Error::Fit(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
