use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An op received operands whose shapes do not fit its rule.
    #[error("shape mismatch in node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("character {0:?} is not in the alphabet")]
    Alphabet(char),

    #[error("target {target:?} needs at least {needed} timesteps but only {available} are available")]
    InfeasibleTarget {
        target: String,
        needed: usize,
        available: usize,
    },

    #[error("degenerate box [{0}, {1}, {2}, {3}]")]
    DegenerateBox(f64, f64, f64, f64),

    #[error("layout failed: {0}")]
    Layout(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("{}: field `{field}`: {detail}", file.display())]
    Dataset {
        file: PathBuf,
        field: String,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 2 config, 3 data or I/O, 4 numeric, 5 checkpoint
    /// version, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dataset { .. }
            | Error::Io { .. }
            | Error::Image(_)
            | Error::Checkpoint(_)
            | Error::Alphabet(_) => 3,
            Error::Diverged(_) | Error::NonFinite(_) => 4,
            Error::CheckpointVersion { .. } => 5,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset(
        file: impl Into<PathBuf>,
        field: impl Into<String>,
        detail: impl std::fmt::Display,
    ) -> Self {
        Error::Dataset {
            file: file.into(),
            field: field.into(),
            detail: detail.to_string(),
        }
    }
}
