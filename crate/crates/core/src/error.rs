//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    /// `v` was parallel to the anchor; the caller must resample it.
    #[error("vector has no component orthogonal to the anchor")]
    ParallelVector,

    #[error("empty bank: {0}")]
    EmptyBank(String),

    #[error("task sets differ; symmetric difference: {}", .0.join(", "))]
    TaskMismatch(Vec<String>),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("transform kind mismatch: expected {expected}, got {actual}")]
    TransformKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("{path}: {location}: {message}")]
    Format {
        path: PathBuf,
        location: FormatLocation,
        message: String,
    },

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Where inside a file a format error was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatLocation {
    /// 1-based line of a text file.
    Line(usize),
    /// Byte offset in a binary file.
    Offset(u64),
}

impl std::fmt::Display for FormatLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatLocation::Line(n) => write!(f, "line {n}"),
            FormatLocation::Offset(n) => write!(f, "byte offset {n}"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI: 3 for divergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
