use std::path::PathBuf;

use pheno_numerics::NumericsError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("session '{session}': {coords} coordinate frames but {labels} labels")]
    FrameCountMismatch {
        session: String,
        coords: usize,
        labels: usize,
    },
    #[error("session '{session}': unknown behavior label '{label}' at frame {frame}")]
    UnknownBehavior {
        session: String,
        frame: usize,
        label: String,
    },
    #[error("session '{session}': genotype '{genotype}' is not in cohort '{cohort}' set {allowed:?}")]
    UnknownGenotype {
        session: String,
        cohort: String,
        genotype: String,
        allowed: Vec<String>,
    },
    #[error("session '{session}': non-finite coordinate at frame {frame}")]
    NonFinite { session: String, frame: usize },
    #[error("session '{session}': expected {expected} keypoints, found {found}")]
    KeypointMismatch {
        session: String,
        expected: usize,
        found: usize,
    },
    #[error("session '{session}' has {frames} frames, shorter than one {window}-frame window")]
    SessionTooShort {
        session: String,
        frames: usize,
        window: usize,
    },
    #[error("need at least {needed} sessions, got {got}")]
    TooFewSessions { needed: usize, got: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Config(_) => ErrorKind::Usage,
            Self::NonFiniteLoss { .. } => ErrorKind::Numerical,
            Self::Numerics(NumericsError::NonFiniteGradient(_)) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
