//! Autonomous program discovery: a loop that mutates candidate programs via
//! pluggable generators, scores them with sandboxed evaluators, and records
//! every attempt with its lineage.
//!
//! Two deterministic built-in tasks (circle packing in the unit square and
//! the minimum-overlap step-function bound) together with the offline mock
//! generator make the whole loop runnable without network access.

pub mod db;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod providers;
pub mod report;
pub mod tasks;

pub use db::{load_run, LoadedRun, ProgramDatabase, RunStore};
pub use engine::{
    components, compute_speedup, count_iterations, percent_improvement, run_discovery, select_parent, Discovery,
    PromptBundle, SelectionPolicy,
};
pub use error::{Error, Result};
pub use harness::{parse_result, BuiltinEvaluator, Evaluator, EvaluatorSpec, ExternalEvaluator, TaskId};
pub use model::{
    Candidate, CandidateId, Clock, Direction, EvaluationResult, FailureReason, RunConfig, RunReport, StopReason,
    TrajectoryPoint,
};
pub use providers::{mock_mutate, ModelEnsemble, Provider, ProviderConfig, ProviderSet};
pub use report::{compare, Comparison, TrajectoryTable};
