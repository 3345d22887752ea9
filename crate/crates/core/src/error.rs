use thiserror::Error;

/// Errors produced by the timing, yield and sizing routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model value violates one of its invariants. `field` is a dotted path
    /// such as `stages[2].gates[0].x`.
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    /// A pipeline description could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The correlation matrix is too far from positive semi-definite to be
    /// repaired by eigenvalue clamping.
    #[error("correlation matrix is not repairable (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
