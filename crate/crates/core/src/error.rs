use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeedError>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`] so the CLI can map them onto exit codes.
#[derive(Debug, Error)]
pub enum SeedError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite input to {0}")]
    NumericInput(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("capacity exceeded: index {index} >= capacity {capacity}")]
    Capacity { index: usize, capacity: usize },

    #[error("window of {len} steps is shorter than the patch length {patch}")]
    EmptyWindow { len: usize, patch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-finite value at line {line}, column '{column}'")]
    NonFiniteCell { line: usize, column: String },

    #[error("insufficient data: need {needed} rows, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes; the CLI maps them to exit codes 1, 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl SeedError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SeedError::Config(_) | SeedError::Contract(_) => ErrorKind::Usage,
            SeedError::Shape { .. }
            | SeedError::InvalidTensor(_)
            | SeedError::Capacity { .. }
            | SeedError::EmptyWindow { .. }
            | SeedError::Parse { .. }
            | SeedError::NonFiniteCell { .. }
            | SeedError::InsufficientData { .. }
            | SeedError::Schema(_)
            | SeedError::EmptySplit(_)
            | SeedError::Checkpoint(_)
            | SeedError::Io { .. } => ErrorKind::Data,
            SeedError::NumericInput(_) | SeedError::Divergence { .. } => ErrorKind::Numeric,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        SeedError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        SeedError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
