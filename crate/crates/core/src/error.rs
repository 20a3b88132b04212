use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GcdError {
    #[error("shape mismatch at node {node}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        node: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite value produced at node {node}")]
    NonFinite { node: usize },

    #[error("leaf {node} has no value assigned")]
    UnassignedLeaf { node: usize },

    #[error("loss node {node} is {rows}x{cols}, expected a 1x1 scalar")]
    LossNotScalar { node: usize, rows: usize, cols: usize },

    #[error("backward called before forward")]
    ForwardNotRun,

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GcdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GcdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            GcdError::ShapeMismatch { .. } => "shape",
            GcdError::NonFinite { .. } => "non_finite",
            GcdError::UnassignedLeaf { .. } => "unassigned_leaf",
            GcdError::LossNotScalar { .. } => "loss_not_scalar",
            GcdError::ForwardNotRun => "forward_not_run",
            GcdError::ZeroNormRow { .. } => "zero_norm_row",
            GcdError::InvalidArgument(_) => "invalid_argument",
            GcdError::InvariantViolation(_) => "invariant",
            GcdError::MalformedFile { .. } => "malformed_file",
            GcdError::Csv { .. } => "csv",
            GcdError::Config(_) => "config",
            GcdError::Numerical(_) => "numerical",
            GcdError::Io { .. } => "io",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GcdError::Config(_) => 2,
            GcdError::Io { .. } | GcdError::MalformedFile { .. } | GcdError::Csv { .. } => 3,
            GcdError::NonFinite { .. } | GcdError::Numerical(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, GcdError>;
