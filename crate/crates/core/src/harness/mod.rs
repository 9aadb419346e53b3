//! Evaluators: the in-process built-in tasks and the external-process
//! protocol.
//!
//! External protocol: the harness writes the program to `candidate.txt` in a
//! fresh directory, runs `<command> <args..> <path-to-candidate.txt>` with
//! `EVAL_TIMEOUT_S` set, and on exit code 0 reads the last stdout line as
//! `{"valid": bool, "score": number, "metrics": {name: number}}` (metrics
//! optional).

mod builtin;
mod external;
pub mod scoring;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Clock, Direction, EvaluationResult, FailureReason};
use crate::tasks::Formulation;

pub use builtin::BuiltinEvaluator;
pub use external::{evaluate_external, ExternalEvaluator, KILL_GRACE_S};
pub use scoring::{mean_of_normalized, threshold_validity, Normalizer, ThresholdRule};

/// Anything that turns a program into a verdict.
pub trait Evaluator: Send + Sync {
    fn direction(&self) -> Direction;
    fn evaluate(&self, program: &str) -> EvaluationResult;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    CirclePacking,
    MinOverlap,
}

impl TaskId {
    pub fn direction(self) -> Direction {
        match self {
            TaskId::CirclePacking => Direction::Maximize,
            TaskId::MinOverlap => Direction::Minimize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::CirclePacking => "circle_packing",
            TaskId::MinOverlap => "min_overlap",
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle_packing" => Ok(TaskId::CirclePacking),
            "min_overlap" => Ok(TaskId::MinOverlap),
            other => Err(Error::config(
                "task_id",
                format!("unknown builtin task {other:?} (circle_packing, min_overlap)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorKind {
    Builtin {
        task_id: TaskId,
        #[serde(default)]
        formulation: Formulation,
    },
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

/// Post-parse rules applied to external results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Postprocess {
    /// Every metric must stay at or below its bound, else the result becomes
    /// a constraint failure.
    #[serde(default)]
    pub validity_rules: Vec<ThresholdRule>,
    /// When non-empty the score is replaced by the mean of these normalized metrics.
    #[serde(default)]
    pub normalizers: BTreeMap<String, Normalizer>,
}

impl Postprocess {
    pub fn is_empty(&self) -> bool {
        self.validity_rules.is_empty() && self.normalizers.is_empty()
    }

    fn apply(&self, mut result: EvaluationResult) -> EvaluationResult {
        if !result.valid || self.is_empty() {
            return result;
        }
        if !self.normalizers.is_empty() {
            match mean_of_normalized(&result.metrics, &self.normalizers) {
                Ok(score) if score.is_finite() => result.score = score,
                Ok(score) => return protocol_failure(result, format!("aggregate score {score}")),
                Err(e) => return protocol_failure(result, e.to_string()),
            }
        }
        match threshold_validity(&result.metrics, &self.validity_rules) {
            Ok(true) => result,
            Ok(false) => EvaluationResult {
                valid: false,
                failure_reason: Some(FailureReason::Constraint),
                log_excerpt: append_line(&result.log_excerpt, "metric above validity threshold"),
                ..result
            },
            Err(e) => protocol_failure(result, e.to_string()),
        }
    }
}

fn protocol_failure(result: EvaluationResult, why: String) -> EvaluationResult {
    EvaluationResult {
        valid: false,
        score: 0.0,
        failure_reason: Some(FailureReason::Protocol),
        log_excerpt: append_line(&result.log_excerpt, &why),
        ..result
    }
}

fn append_line(log: &str, line: &str) -> String {
    if log.is_empty() {
        line.to_owned()
    } else {
        format!("{log}\n{line}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorSpec {
    #[serde(flatten)]
    pub kind: EvaluatorKind,
    /// Overrides the run's `timeout_s` for this evaluator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
    /// Parent directory for per-evaluation working directories (default: system temp).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Postprocess::is_empty")]
    pub postprocess: Postprocess,
}

impl EvaluatorSpec {
    pub fn builtin(task_id: TaskId) -> Self {
        EvaluatorSpec {
            kind: EvaluatorKind::Builtin {
                task_id,
                formulation: Formulation::default(),
            },
            timeout_s: None,
            workdir_root: None,
            postprocess: Postprocess::default(),
        }
    }

    pub fn external(command: impl Into<String>, args: Vec<String>) -> Self {
        EvaluatorSpec {
            kind: EvaluatorKind::External {
                command: command.into(),
                args,
            },
            timeout_s: None,
            workdir_root: None,
            postprocess: Postprocess::default(),
        }
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Self {
        self.timeout_s = Some(timeout_s);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.timeout_s {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("evaluator.timeout_s", "must be positive"));
            }
        }
        if let EvaluatorKind::External { command, .. } = &self.kind {
            if command.trim().is_empty() {
                return Err(Error::config("evaluator.command", "is empty"));
            }
        }
        Ok(())
    }

    /// Builds a ready evaluator, checking that an external command resolves.
    pub fn build(
        &self,
        direction: Direction,
        default_timeout_s: f64,
        clock: Clock,
    ) -> Result<Box<dyn Evaluator>> {
        self.validate()?;
        match &self.kind {
            EvaluatorKind::Builtin {
                task_id,
                formulation,
            } => {
                if task_id.direction() != direction {
                    return Err(Error::Startup(format!(
                        "{} is a {} task but the run asks to {}",
                        task_id.as_str(),
                        task_id.direction().as_str(),
                        direction.as_str()
                    )));
                }
                Ok(Box::new(
                    BuiltinEvaluator::new(*task_id)
                        .with_formulation(*formulation)
                        .with_clock(clock),
                ))
            }
            EvaluatorKind::External { command, args } => {
                let mut ev = ExternalEvaluator::new(
                    command.clone(),
                    args.clone(),
                    self.timeout_s.unwrap_or(default_timeout_s),
                    direction,
                );
                ev.workdir_root = self.workdir_root.clone();
                ev.postprocess = self.postprocess.clone();
                ev.check_command()?;
                Ok(Box::new(ev))
            }
        }
    }
}

/// Parses one protocol line. Declared-invalid results become constraint failures.
pub fn parse_result(last_line: &str, direction: Direction) -> Result<EvaluationResult> {
    let value: serde_json::Value = serde_json::from_str(last_line.trim())
        .map_err(|e| Error::Protocol(format!("result line is not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Protocol("result is not a JSON object".into()))?;
    let valid = obj
        .get("valid")
        .and_then(serde_json::Value::as_bool)
        .ok_or_else(|| Error::Protocol("missing boolean `valid`".into()))?;
    let score = obj
        .get("score")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::Protocol("missing numeric `score`".into()))?;
    let mut metrics = BTreeMap::new();
    match obj.get("metrics") {
        None | Some(serde_json::Value::Null) => {}
        Some(serde_json::Value::Object(m)) => {
            for (name, v) in m {
                let x = v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Protocol(format!("metric `{name}` is not a number")))?;
                metrics.insert(name.clone(), x);
            }
        }
        Some(_) => return Err(Error::Protocol("`metrics` is not an object".into())),
    }
    if valid && !score.is_finite() {
        return Err(Error::Protocol(format!("valid result has score {score}")));
    }
    Ok(EvaluationResult {
        valid,
        score,
        direction,
        metrics,
        duration_s: 0.0,
        log_excerpt: String::new(),
        failure_reason: (!valid).then_some(FailureReason::Constraint),
    })
}
