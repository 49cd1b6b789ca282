use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: expected {expected} coordinates, found {found}")]
    LineDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{context}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("store is empty, its dimension is undefined")]
    UndefinedDimension,

    #[error("duplicate record id `{0}`")]
    DuplicateRecord(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("invalid trial list: {0}")]
    InvalidTrials(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0} has zero norm")]
    ZeroNorm(&'static str),

    #[error("score set needs at least one target and one nontarget (targets {targets}, nontargets {nontargets})")]
    InsufficientLabels { targets: usize, nontargets: usize },

    #[error("score set is unlabeled")]
    Unlabeled,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite training loss in batch {batch} (epoch {epoch}), offending pair {enroll_id} / {test_id}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        enroll_id: String,
        test_id: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("systems are not aligned: {0}")]
    Misaligned(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Whether this error stems from bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Parse { .. }
            | Error::LineDimension { .. }
            | Error::DimensionMismatch { .. }
            | Error::DuplicateRecord(_)
            | Error::UnknownId(_)
            | Error::InvalidTrials(_)
            | Error::Config(_)
            | Error::Checkpoint(_)
            | Error::Misaligned(_)
            | Error::Unlabeled => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
