use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {} ({kind})", node.map_or("an operator".to_string(), |n| format!("node {n}")))]
    NonFinite { node: Option<NodeId>, kind: &'static str },

    #[error("invalid graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("malformed graph document: {0}")]
    Document(String),

    #[error("unknown node tag {tag:?} on node {id}")]
    UnknownTag { id: NodeId, tag: String },

    #[error("unsupported document version {0:?}")]
    Version(String),

    #[error("no adaptive-avg-pool injection site in graph {0:?}")]
    NoInjectionSite(String),

    #[error("trigger of size {size} at ({row}, {col}) does not fit a {height}x{width} image")]
    TriggerOutOfBounds {
        size: usize,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("{0}: truncated")]
    Truncated(String),

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("no run reaches the task-accuracy floor {0}")]
    NoQualifyingRun(f64),

    #[error("empty sample")]
    EmptySample,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool: 2 for filesystem
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
