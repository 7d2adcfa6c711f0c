use thiserror::Error;

use crate::bohmian::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("shape mismatch: expected {expected} amplitudes, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("propagation diverged at t = {time:e} (non-finite amplitude)")]
    Divergence { time: f64 },

    #[error("transmitted sector undefined: T = {transmission:e} is at or below the floor")]
    UndefinedSector { transmission: f64 },

    #[error("superarrival window still open at the end of the series (t_d = {t_d:e})")]
    WindowOpen { t_d: f64 },

    #[error("reference area over the window is zero")]
    DegenerateReference,

    #[error("trajectory from x = {x0:e} entered a masked region at t = {time:e}")]
    IntegrationDegenerate {
        x0: f64,
        time: f64,
        partial: Box<Trajectory>,
    },

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error in `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: &str, constraint: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            constraint: constraint.into(),
        }
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Numerical(_)
            | Error::Divergence { .. }
            | Error::IntegrationDegenerate { .. }
            | Error::DegenerateReference
            | Error::UndefinedSector { .. }
            | Error::WindowOpen { .. } => 2,
            _ => 1,
        }
    }
}
