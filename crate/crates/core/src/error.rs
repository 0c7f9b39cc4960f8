use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// State of a coordinate-descent solve that ran out of iterations.
#[derive(Debug, Clone)]
pub struct NonConvergence {
    pub voxel: usize,
    pub iterations: usize,
    pub max_change: f64,
    pub kkt_residual: f64,
    /// Weights at the last completed sweep.
    pub last_iterate: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("write error on {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "coordinate descent did not converge for voxel {} after {} sweeps (max change {:.3e}, KKT residual {:.3e})",
        .0.voxel, .0.iterations, .0.max_change, .0.kkt_residual
    )]
    Convergence(Box<NonConvergence>),

    #[error("selection error: {0}")]
    Selection(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if let Some(pos) = values.into_iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "{what} contains a non-finite value at flat index {pos}"
        )));
    }
    Ok(())
}
