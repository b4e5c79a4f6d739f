use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge ({u}, {v}) has an endpoint outside [0, {num_nodes})")]
    EndpointOutOfRange { u: usize, v: usize, num_nodes: usize },

    #[error("{what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("node {node} has class id {class} but only {num_classes} classes exist")]
    ClassOutOfRange {
        node: usize,
        class: usize,
        num_classes: usize,
    },

    #[error("node {node} appears in more than one split ({first} and {second})")]
    SplitOverlap {
        node: usize,
        first: &'static str,
        second: &'static str,
    },

    #[error("node {node} index out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("node {node} is an edge endpoint but has no label")]
    Unlabeled { node: usize },

    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0} not found")]
    MissingFile(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("noise: {0}")]
    Noise(String),

    #[error("original edge set empty")]
    EmptyOriginal,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss in {stage} at step {step} (last finite loss {last_finite})")]
    NonFinite {
        stage: &'static str,
        step: usize,
        last_finite: f64,
    },

    #[error("{stage} diverged: loss {loss} exceeded 10x initial {initial} for 50 consecutive steps")]
    Diverged {
        stage: &'static str,
        loss: f64,
        initial: f64,
    },

    #[error("class {0} has no training nodes")]
    EmptyClass(usize),

    #[error("{0} mask is empty")]
    EmptyMask(&'static str),

    #[error("scores cover {scores} edges but the edge set has {edges}")]
    ScoreMismatch { scores: usize, edges: usize },

    #[error("candidate edge ({0}, {1}) already exists in the graph")]
    CandidateOverlap(usize, usize),

    #[error("truncated SVD did not converge after {iterations} iterations (residual {residual:.3e})")]
    SvdNoConvergence { iterations: usize, residual: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
