use std::path::PathBuf;

use crate::model::CandidateId;
use crate::tasks::packing::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("lineage error: parent {parent} of new candidate is not stored")]
    DanglingParent { parent: CandidateId },

    #[error("lineage error: iteration {iteration} precedes last stored iteration {last}")]
    IterationOrder { iteration: u64, last: u64 },

    #[error("unknown candidate id {0}")]
    UnknownId(CandidateId),

    #[error("no candidate with a valid result")]
    EmptyResult,

    #[error("invalid configuration: `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("evaluator unusable: {0}")]
    Startup(String),

    #[error("program format error: {0}")]
    Format(String),

    #[error("infeasible packing: {} violation(s)", .0.len())]
    Infeasible(Vec<Violation>),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("missing metric `{0}`")]
    MissingMetric(String),

    #[error("normalizer for `{0}` divides by zero")]
    DivisionByZero(String),

    #[error("corrupt run directory {path}: {message}")]
    CorruptRun { path: PathBuf, message: String },

    #[error(transparent)]
    Generation(#[from] crate::providers::GenerationError),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
