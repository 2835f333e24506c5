use std::path::PathBuf;

use thiserror::Error;

use crate::labeling::Pattern;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed graph `{function}`: {reason}")]
    MalformedGraph { function: String, reason: String },

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("inconsistent debug tables: {0}")]
    InconsistentTables(String),

    #[error("no bridge in the index supports {0} pairs")]
    Exhausted(Pattern),

    #[error("need at least 3 projects to split, got {0}")]
    TooFewProjects(usize),

    #[error("invalid split fractions ({0}, {1}, {2}); they must be non-negative and sum to 1")]
    InvalidFractions(f64, f64, f64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("graph has {nodes} nodes, above the configured cap of {cap}")]
    GraphTooLarge { nodes: usize, cap: usize },

    #[error("label must be -1 or +1, got {0}")]
    InvalidLabel(i8),

    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),

    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("scores must contain both positive and negative labels")]
    DegenerateLabels,

    #[error("no call to `{callee}` at node {node}")]
    SiteNotFound { node: u32, callee: String },

    #[error("inlining never produced a {0} pair under this configuration")]
    PatternStarvation(Pattern),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn malformed(function: &str, reason: impl Into<String>) -> Self {
        Error::MalformedGraph {
            function: function.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteGradient(_)
                | Error::Diverged { .. }
                | Error::PatternStarvation(_)
                | Error::Exhausted(_)
                | Error::Io { .. }
        )
    }
}
