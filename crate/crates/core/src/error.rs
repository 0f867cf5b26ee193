use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry {x_count}x{y_count}: both dimensions must be at least 1")]
    InvalidGeometry { x_count: usize, y_count: usize },

    #[error("pilot of length {l} cannot carry {n_rf} orthogonal rows")]
    InvalidPilot { n_rf: usize, l: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("entry {index} has modulus {modulus}, expected 1")]
    NotUnitModulus { index: usize, modulus: f64 },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("unidentifiable configuration: {0}")]
    Unidentifiable(String),

    #[error("singular information matrix (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("RF chain {chain} out of range (have {n_rf})")]
    ChainOutOfRange { chain: usize, n_rf: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trial {trial} (seed {seed}): {source}")]
    Trial {
        seed: u64,
        trial: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs'
    /// shape or the environment.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::DegenerateDesign(_) | Error::Unidentifiable(_) | Error::Singular { .. } => true,
            Error::Trial { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
