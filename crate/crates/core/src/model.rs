//! Domain records shared by the database, the engine and the run directory.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::engine::SelectionPolicy;
use crate::error::{Error, Result};
use crate::harness::EvaluatorSpec;
use crate::providers::ProviderConfig;

/// Dense id assigned by the database in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl CandidateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// `true` when `a` is strictly better than `b`.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }

    /// `true` when `score` meets or beats `target`.
    pub fn meets(self, score: f64, target: f64) -> bool {
        match self {
            Direction::Maximize => score >= target,
            Direction::Minimize => score <= target,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Maximize => "maximize",
            Direction::Minimize => "minimize",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize" => Ok(Direction::Maximize),
            "minimize" => Ok(Direction::Minimize),
            other => Err(Error::config(
                "direction",
                format!("expected maximize or minimize, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureReason {
    Timeout,
    Crash,
    Protocol,
    Constraint,
}

/// Verdict of one evaluator run on one program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub valid: bool,
    pub score: f64,
    pub direction: Direction,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub duration_s: f64,
    #[serde(default)]
    pub log_excerpt: String,
    #[serde(default)]
    pub failure_reason: Option<FailureReason>,
}

impl EvaluationResult {
    pub fn valid(score: f64, direction: Direction) -> Self {
        EvaluationResult {
            valid: true,
            score,
            direction,
            metrics: BTreeMap::new(),
            duration_s: 0.0,
            log_excerpt: String::new(),
            failure_reason: None,
        }
    }

    /// An invalid verdict. Invalid results always carry score 0.
    pub fn failed(reason: FailureReason, direction: Direction, log: impl Into<String>) -> Self {
        EvaluationResult {
            valid: false,
            score: 0.0,
            direction,
            metrics: BTreeMap::new(),
            duration_s: 0.0,
            log_excerpt: log.into(),
            failure_reason: Some(reason),
        }
    }

    pub fn with_metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_owned(), value);
        self
    }

    /// Usable score: `Some` only for valid results.
    pub fn usable_score(&self) -> Option<f64> {
        self.valid.then_some(self.score)
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !self.valid && self.failure_reason.is_none() {
            return Err(Error::Protocol(
                "invalid result without failure_reason".into(),
            ));
        }
        if self.valid && !self.score.is_finite() {
            return Err(Error::Protocol("valid result with non-finite score".into()));
        }
        Ok(())
    }

    /// The evaluator-facing line: `{"valid":..,"score":..,"metrics":{..}}`.
    pub fn to_protocol_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("valid".into(), self.valid.into());
        obj.insert("score".into(), finite_json(self.score));
        if !self.metrics.is_empty() {
            let metrics = self
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), finite_json(*v)))
                .collect();
            obj.insert("metrics".into(), serde_json::Value::Object(metrics));
        }
        serde_json::Value::Object(obj).to_string()
    }
}

fn finite_json(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// One generated program and its place in the lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub parent_id: Option<CandidateId>,
    pub iteration: u64,
    /// Stored in `programs/<id>.txt`, not in `db.jsonl`.
    #[serde(skip)]
    pub program: String,
    pub provider_id: String,
    pub created_at: DateTime<Utc>,
    pub result: Option<EvaluationResult>,
}

impl Candidate {
    /// A candidate awaiting insertion; the database assigns the id.
    pub fn new(
        parent_id: Option<CandidateId>,
        iteration: u64,
        program: impl Into<String>,
        provider_id: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Self {
        Candidate {
            id: CandidateId(0),
            parent_id,
            iteration,
            program: program.into(),
            provider_id: provider_id.into(),
            created_at,
            result: None,
        }
    }

    pub fn with_result(mut self, result: EvaluationResult) -> Self {
        self.result = Some(result);
        self
    }

    pub fn usable_score(&self) -> Option<f64> {
        self.result.as_ref().and_then(EvaluationResult::usable_score)
    }
}

/// Source of `created_at` stamps and builtin evaluation durations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    #[default]
    System,
    /// `created_at` = UNIX epoch + candidate id seconds, in-process durations = 0.
    /// Makes `db.jsonl` a pure function of the config.
    Logical,
}

impl Clock {
    pub fn stamp(self, id: CandidateId) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Logical => Utc
                .timestamp_opt(id.0 as i64, 0)
                .single()
                .unwrap_or_default(),
        }
    }

    pub fn elapsed_s(self, since: std::time::Instant) -> f64 {
        match self {
            Clock::System => since.elapsed().as_secs_f64(),
            Clock::Logical => 0.0,
        }
    }
}

fn default_history_cap() -> usize {
    5
}

/// Everything needed to launch a run. Serialized as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task_prompt: String,
    pub initial_program: String,
    pub evaluator: EvaluatorSpec,
    pub direction: Direction,
    pub max_iterations: u64,
    pub parallelism: usize,
    pub model_weights: BTreeMap<String, f64>,
    pub timeout_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub target_score: Option<f64>,

    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub selection: SelectionPolicy,
    #[serde(default)]
    pub clock: Clock,
    #[serde(default)]
    pub allow_invalid_seed: bool,
    #[serde(default = "default_history_cap")]
    pub history_cap: usize,
}

impl RunConfig {
    /// A config with the defaults for everything but the task.
    pub fn new(
        task_prompt: impl Into<String>,
        initial_program: impl Into<String>,
        evaluator: EvaluatorSpec,
        direction: Direction,
    ) -> Self {
        RunConfig {
            task_prompt: task_prompt.into(),
            initial_program: initial_program.into(),
            evaluator,
            direction,
            max_iterations: 10,
            parallelism: 1,
            model_weights: BTreeMap::from([("mock".to_owned(), 1.0)]),
            timeout_s: 60.0,
            seed: 0,
            target_score: None,
            provider: ProviderConfig::default(),
            selection: SelectionPolicy::default(),
            clock: Clock::System,
            allow_invalid_seed: false,
            history_cap: default_history_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("parallelism", "must be at least 1"));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::config("timeout_s", "must be a positive number of seconds"));
        }
        validate_weights(&self.model_weights)?;
        if let Some(t) = self.target_score {
            if !t.is_finite() {
                return Err(Error::config("target_score", "must be finite"));
            }
        }
        self.selection.validate()?;
        self.evaluator.validate()?;
        Ok(())
    }
}

pub(crate) fn validate_weights(weights: &BTreeMap<String, f64>) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("model_weights", "needs at least one model"));
    }
    for (model, w) in weights {
        if !(0.0..=1.0).contains(w) {
            return Err(Error::config(
                "model_weights",
                format!("weight of {model:?} is {w}, outside [0, 1]"),
            ));
        }
    }
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "model_weights",
            format!("weights sum to {sum}, expected 1"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    TargetReached,
    Aborted,
}

/// Best-so-far state after one iteration. Iteration 0 is the seed program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: u64,
    pub attempts_cumulative: u64,
    pub best_score: f64,
    pub best_id: CandidateId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best_candidate_id: Option<CandidateId>,
    pub best_score_trajectory: Vec<TrajectoryPoint>,
    pub attempts: u64,
    pub iterations_used: u64,
    pub stop_reason: StopReason,
    pub direction: Direction,
    pub parallelism: usize,
}

impl RunReport {
    pub fn best_score(&self) -> Option<f64> {
        self.best_score_trajectory.last().map(|p| p.best_score)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Protocol(m));
        for w in self.best_score_trajectory.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return bad("trajectory iterations not strictly increasing".into());
            }
            if self.direction.is_better(w[0].best_score, w[1].best_score) {
                return bad(format!(
                    "trajectory not monotone at iteration {}",
                    w[1].iteration
                ));
            }
        }
        if self.attempts > self.iterations_used * self.parallelism as u64 {
            return bad(format!(
                "{} attempts exceed {} iterations x {}",
                self.attempts, self.iterations_used, self.parallelism
            ));
        }
        Ok(())
    }
}
