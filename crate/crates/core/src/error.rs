use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RosaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RosaError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing required file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("node index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate node index {0}")]
    DuplicateNode(usize),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("edge ({0}, {1}) has an unlabeled endpoint")]
    UnlabeledEndpoint(usize, usize),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value produced while differentiating `{op}`")]
    NonFinite { op: &'static str },

    #[error("log of non-positive value {0}")]
    LogDomain(f64),

    #[error("sinkhorn scaling hit a zero or non-finite denominator at iteration {iteration}; lambda too large for the cost scale")]
    SinkhornBreakdown { iteration: usize },

    #[error("exact transport oracle supports at most {max}x{max} problems, got {rows}x{cols}")]
    ProblemTooLarge { rows: usize, cols: usize, max: usize },

    #[error("linear probe needs at least two classes in the training split, found {0}")]
    SingleClass(usize),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Usage(String),
}

impl RosaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RosaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        RosaError::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Errors caused by bad input files or arguments rather than runtime failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RosaError::Parse { .. }
                | RosaError::MissingFile(_)
                | RosaError::IndexOutOfRange { .. }
                | RosaError::DuplicateNode(_)
                | RosaError::Config(_)
                | RosaError::Usage(_)
                | RosaError::Checkpoint(_)
        ) || matches!(self, RosaError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
