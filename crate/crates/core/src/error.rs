use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum EggError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("svd did not converge after {sweeps} sweeps ({rows}x{cols}, off-diagonal {off_diagonal:.3e}, condition estimate {condition:.3e})")]
    Decomposition {
        sweeps: usize,
        rows: usize,
        cols: usize,
        off_diagonal: f64,
        condition: f64,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EggError> = std::result::Result<T, E>;

impl EggError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        EggError::Shape { op, left, right }
    }

    /// True for errors caused by malformed or unusable input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            EggError::Parse { .. } | EggError::Data(_) | EggError::Io { .. }
        )
    }
}
