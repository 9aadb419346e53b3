use std::time::Instant;

use crate::error::Error;
use crate::model::{Clock, Direction, EvaluationResult, FailureReason};
use crate::tasks::overlap::{score_overlap, Formulation, StepFunction};
use crate::tasks::packing::{self, Packing};

use super::{Evaluator, TaskId};

/// In-process evaluator for the built-in tasks.
#[derive(Debug, Clone)]
pub struct BuiltinEvaluator {
    task: TaskId,
    formulation: Formulation,
    tol: f64,
    clock: Clock,
}

impl BuiltinEvaluator {
    pub fn new(task: TaskId) -> Self {
        BuiltinEvaluator {
            task,
            formulation: Formulation::default(),
            tol: packing::DEFAULT_TOL,
            clock: Clock::System,
        }
    }

    pub fn with_formulation(mut self, formulation: Formulation) -> Self {
        self.formulation = formulation;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    fn evaluate_packing(&self, program: &str) -> EvaluationResult {
        let dir = Direction::Maximize;
        let p = match Packing::parse(program) {
            Ok(p) => p,
            Err(e) => return EvaluationResult::failed(FailureReason::Constraint, dir, e.to_string()),
        };
        let n = p.n() as f64;
        match packing::score_packing_with_tol(&p, self.tol) {
            Ok(score) => EvaluationResult::valid(score, dir).with_metric("n", n),
            Err(Error::Infeasible(violations)) => {
                let log = violations
                    .iter()
                    .take(8)
                    .map(|v| serde_json::to_string(v).unwrap_or_default())
                    .collect::<Vec<_>>()
                    .join("\n");
                EvaluationResult::failed(FailureReason::Constraint, dir, log)
                    .with_metric("n", n)
                    .with_metric("violations", violations.len() as f64)
            }
            Err(e) => EvaluationResult::failed(FailureReason::Constraint, dir, e.to_string()),
        }
    }

    fn evaluate_overlap(&self, program: &str) -> EvaluationResult {
        let dir = Direction::Minimize;
        let f = match StepFunction::parse(program) {
            Ok(f) => f,
            Err(e) => return EvaluationResult::failed(FailureReason::Constraint, dir, e.to_string()),
        };
        match score_overlap(&f, self.formulation) {
            Ok(s) => EvaluationResult::valid(s.value, dir)
                .with_metric("m", f.m() as f64)
                .with_metric("argmax_shift", s.argmax_shift),
            Err(e) => EvaluationResult::failed(FailureReason::Constraint, dir, e.to_string())
                .with_metric("m", f.m() as f64),
        }
    }
}

impl Evaluator for BuiltinEvaluator {
    fn direction(&self) -> Direction {
        self.task.direction()
    }

    fn evaluate(&self, program: &str) -> EvaluationResult {
        let start = Instant::now();
        let mut result = match self.task {
            TaskId::CirclePacking => self.evaluate_packing(program),
            TaskId::MinOverlap => self.evaluate_overlap(program),
        };
        result.duration_s = self.clock.elapsed_s(start);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_verdicts() {
        let ev = BuiltinEvaluator::new(TaskId::CirclePacking);
        let ok = ev.evaluate("packing n=1\n0.5 0.5 0.5\n");
        assert!(ok.valid);
        assert_eq!(ok.score, 0.5);

        let bad = ev.evaluate("packing n=2\n0.3 0.5 0.2\n0.6 0.5 0.2\n");
        assert!(!bad.valid);
        assert_eq!(bad.failure_reason, Some(FailureReason::Constraint));
        assert_eq!(bad.metrics["violations"], 1.0);

        let garbage = ev.evaluate("hello");
        assert_eq!(garbage.failure_reason, Some(FailureReason::Constraint));
    }

    #[test]
    fn overlap_verdicts() {
        let ev = BuiltinEvaluator::new(TaskId::MinOverlap).with_clock(Clock::Logical);
        let ok = ev.evaluate("step m=2\n0.5 0.5\n");
        assert!(ok.valid);
        assert!((ok.score - 0.5).abs() < 1e-12);
        assert_eq!(ok.duration_s, 0.0);
        let bad = ev.evaluate("step m=2\n1 1\n");
        assert!(!bad.valid);
    }
}
