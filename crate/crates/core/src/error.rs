use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown {kind} `{token}`")]
    Resolution {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        token: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{what} index {index} out of range (size {len})")]
    Bounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid query structure: {0}")]
    Structure(String),

    #[error("unknown shape tag `{tag}` (valid tags: {valid})")]
    UnknownTag { tag: String, valid: String },

    #[error("could only generate {succeeded} of {requested} `{tag}` queries")]
    Generation {
        tag: String,
        requested: usize,
        succeeded: usize,
    },

    #[error("invalid template: {0}")]
    Template(String),

    #[error("no template registered for `{kind}` with arity {arity}")]
    MissingTemplate { kind: String, arity: usize },

    #[error("graph contains a cycle")]
    Cycle,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("fusion error: {0}")]
    Fusion(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: String, detail: String },

    #[error("value node {0} has no bound input")]
    Binding(usize),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("query {0} has an empty answer set")]
    EmptyAnswers(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
