//! Shared error type for the tracking pipeline.

use std::path::PathBuf;

/// Errors raised anywhere in the regression/tracking pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point projects behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("degenerate regression targets: projected residuals have zero variance")]
    DegenerateTargets,

    #[error("singular normal equations; rerun with a ridge weight > 0")]
    SingularSystem,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("pose estimation did not converge within {0} iterations")]
    PoseDivergence(usize),

    #[error("model file integrity failure in section `{section}`: {reason}")]
    ModelFormat { section: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("in {context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap with a higher-level context string (stage index, group name, ...).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::BehindCamera { .. }
            | Error::DegenerateTargets
            | Error::SingularSystem
            | Error::DegenerateGeometry(_)
            | Error::PoseDivergence(_) => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Check two dimensions agree, with a named context for the message.
pub fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
