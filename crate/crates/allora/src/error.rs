use std::fmt;
use std::io;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Two operands with incompatible shapes, reported as (rows, cols).
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A linear system whose pivot fell below the rejection threshold.
    Singular { op: &'static str },
    /// An iterative routine exhausted its iteration budget.
    NonConvergence { op: &'static str, iterations: usize },
    /// A parameter outside its documented domain.
    InvalidParam { what: String },
    /// A computation produced NaN or infinity from finite inputs.
    NonFinite { op: &'static str },
    /// A training run whose loss exceeded the divergence threshold.
    Diverged { op: &'static str, loss: f64 },
    /// A verified inequality that failed to hold.
    BoundViolated {
        op: &'static str,
        lhs: f64,
        rhs: f64,
    },
    /// Malformed input data; `location` names the offending byte or line.
    Parse {
        path: String,
        location: String,
        message: String,
    },
    Io { path: String, source: io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: dimension mismatch between {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::Singular { op } => write!(f, "{op}: singular system rejected"),
            Error::NonConvergence { op, iterations } => {
                write!(f, "{op}: no convergence after {iterations} iterations")
            }
            Error::InvalidParam { what } => write!(f, "invalid parameter: {what}"),
            Error::NonFinite { op } => write!(f, "{op}: non-finite value encountered"),
            Error::Diverged { op, loss } => write!(f, "{op}: diverged with loss {loss}"),
            Error::BoundViolated { op, lhs, rhs } => {
                write!(f, "{op}: bound violated: {lhs} > {rhs}")
            }
            Error::Parse {
                path,
                location,
                message,
            } => write!(f, "{path}: {location}: {message}"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn invalid(what: impl Into<String>) -> Self {
        Error::InvalidParam { what: what.into() }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
