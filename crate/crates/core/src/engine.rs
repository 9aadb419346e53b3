//! The discovery loop: select a parent, generate `k` children concurrently,
//! evaluate them, store everything, repeat. Also the iteration-accounting
//! arithmetic used to compare runs.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::db::{LoadedRun, ProgramDatabase, RunStore};
use crate::error::{Error, Result};
use crate::harness::Evaluator;
use crate::model::{
    Candidate, CandidateId, Direction, EvaluationResult, RunConfig, RunReport, StopReason,
    TrajectoryPoint,
};
use crate::providers::{route_model, GenerationError, GenerationRequest, ProviderSet};

/// Greedy parent choice with epsilon exploration among the top `top_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub epsilon: f64,
    pub top_k: usize,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            epsilon: 0.1,
            top_k: 5,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("selection.epsilon", "must lie in [0, 1]"));
        }
        if self.top_k == 0 {
            return Err(Error::config("selection.top_k", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub score: Option<f64>,
    pub summary: String,
}

/// Everything a generator sees for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_prompt: String,
    pub parent_program: String,
    /// `None` when the parent's evaluation was invalid.
    pub parent_score: Option<f64>,
    /// Oldest first, at most the configured cap.
    pub history: Vec<HistoryEntry>,
}

impl PromptBundle {
    pub fn render_user_message(&self) -> String {
        let score = self
            .parent_score
            .map_or_else(|| "invalid".to_owned(), |s| s.to_string());
        let mut out = format!(
            "Current program (score {score}):\n```\n{}\n```\n",
            self.parent_program.trim_end()
        );
        if !self.history.is_empty() {
            out.push_str("\nHow it got here (oldest first):\n");
            for h in &self.history {
                let s = h.score.map_or_else(|| "invalid".to_owned(), |s| s.to_string());
                out.push_str(&format!("- score {s}: {}\n", h.summary));
            }
        }
        out.push_str("\nReturn the complete improved program in a single fenced code block.\n");
        out
    }
}

/// `"+a -b lines"` by multiset line comparison.
pub fn diff_summary(old: &str, new: &str) -> String {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for l in old.lines() {
        *counts.entry(l).or_default() -= 1;
    }
    for l in new.lines() {
        *counts.entry(l).or_default() += 1;
    }
    let added: i64 = counts.values().filter(|&&c| c > 0).sum();
    let removed: i64 = -counts.values().filter(|&&c| c < 0).sum::<i64>();
    format!("+{added} -{removed} lines")
}

/// With probability `1 - epsilon` the best candidate, otherwise a uniform pick
/// among the `top_k` best valid candidates.
pub fn select_parent<'a, R: Rng + ?Sized>(
    db: &'a ProgramDatabase,
    direction: Direction,
    policy: &SelectionPolicy,
    rng: &mut R,
) -> Result<&'a Candidate> {
    let u: f64 = rng.random();
    if u >= policy.epsilon {
        return db.best(direction);
    }
    let top = db.top_k(direction, policy.top_k);
    if top.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(top[rng.random_range(0..top.len())])
}

/// Attempts converted to iterations of `parallelism` concurrent attempts,
/// rounded up. Both arguments must be at least 1.
pub fn count_iterations(attempts: u64, parallelism: u64) -> u64 {
    attempts.div_ceil(parallelism.max(1))
}

/// Ratio of iterations-to-threshold, baseline over subject.
pub fn compute_speedup(baseline_iterations: f64, ours_iterations: f64) -> f64 {
    baseline_iterations / ours_iterations
}

/// Relative reduction `(old - new) / old` in percent.
pub fn percent_improvement(old_value: f64, new_value: f64) -> f64 {
    (old_value - new_value) / old_value * 100.0
}

/// One structured progress line per iteration, printed as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct ProgressLine {
    pub iteration: u64,
    pub best_score: Option<f64>,
    pub attempts: u64,
    pub generated: usize,
    pub valid: usize,
}

struct Planned {
    parent_id: CandidateId,
    request: GenerationRequest,
}

type Outcome = std::result::Result<(String, EvaluationResult), GenerationError>;

/// A configured run. Build with [`Discovery::new`], optionally attach a
/// [`RunStore`] or resume one, then call [`Discovery::run`].
pub struct Discovery<'a> {
    config: &'a RunConfig,
    providers: &'a ProviderSet,
    evaluator: &'a dyn Evaluator,
    db: ProgramDatabase,
    store: Option<RunStore>,
    trajectory: Vec<TrajectoryPoint>,
    attempts: u64,
    iterations_used: u64,
    progress: Option<Box<dyn Write + 'a>>,
    abort: Option<Arc<AtomicBool>>,
    max_failed_iterations: u32,
}

impl<'a> Discovery<'a> {
    pub fn new(
        config: &'a RunConfig,
        providers: &'a ProviderSet,
        evaluator: &'a dyn Evaluator,
    ) -> Result<Self> {
        config.validate()?;
        if evaluator.direction() != config.direction {
            return Err(Error::Startup(format!(
                "evaluator optimizes toward {} but the run is set to {}",
                evaluator.direction().as_str(),
                config.direction.as_str()
            )));
        }
        Ok(Discovery {
            config,
            providers,
            evaluator,
            db: ProgramDatabase::new(),
            store: None,
            trajectory: Vec::new(),
            attempts: 0,
            iterations_used: 0,
            progress: Some(Box::new(std::io::stdout())),
            abort: None,
            max_failed_iterations: 3,
        })
    }

    pub fn with_store(mut self, store: RunStore) -> Self {
        self.store = Some(store);
        self
    }

    /// Continues a persisted run from its database and last report.
    pub fn resume(mut self, store: RunStore, loaded: LoadedRun) -> Result<Self> {
        self.db = loaded.db;
        if let Some(report) = loaded.report {
            self.trajectory = report.best_score_trajectory;
            self.attempts = report.attempts;
            self.iterations_used = report.iterations_used;
        }
        // records may have been appended after the last report was written
        if let Some(last) = self.db.last_iteration() {
            if last > self.iterations_used {
                let extra = self.db.iter().filter(|c| c.iteration > self.iterations_used).count();
                self.attempts += extra as u64;
                self.iterations_used = last;
                self.record_point(last);
            }
        }
        self.store = Some(store);
        Ok(self)
    }

    pub fn with_progress(mut self, out: impl Write + 'a) -> Self {
        self.progress = Some(Box::new(out));
        self
    }

    pub fn quiet(mut self) -> Self {
        self.progress = None;
        self
    }

    /// The loop stops with `aborted` once the flag is set.
    pub fn with_abort_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.abort = Some(flag);
        self
    }

    /// Abort after this many consecutive iterations in which every generation
    /// failed; 0 disables the check.
    pub fn with_max_failed_iterations(mut self, n: u32) -> Self {
        self.max_failed_iterations = n;
        self
    }

    pub fn database(&self) -> &ProgramDatabase {
        &self.db
    }

    pub fn run(mut self) -> Result<RunReport> {
        if self.db.is_empty() {
            self.evaluate_seed()?;
        }

        let mut stop = StopReason::Budget;
        let mut failed_streak = 0u32;
        if self.target_met() {
            stop = StopReason::TargetReached;
        } else {
            while self.iterations_used < self.config.max_iterations {
                if self.abort.as_ref().is_some_and(|f| f.load(Ordering::Relaxed)) {
                    stop = StopReason::Aborted;
                    break;
                }
                let iteration = self.iterations_used + 1;
                let (generated, valid) = self.run_iteration(iteration)?;
                self.iterations_used = iteration;
                self.record_point(iteration);
                self.emit_progress(iteration, generated, valid);
                self.persist_report(StopReason::Budget)?;

                if self.target_met() {
                    stop = StopReason::TargetReached;
                    break;
                }
                failed_streak = if generated == 0 { failed_streak + 1 } else { 0 };
                if self.max_failed_iterations > 0 && failed_streak >= self.max_failed_iterations {
                    stop = StopReason::Aborted;
                    break;
                }
            }
        }
        let report = self.report(stop);
        report.check_invariants()?;
        self.persist_report(stop)?;
        Ok(report)
    }

    fn evaluate_seed(&mut self) -> Result<()> {
        let program = self.config.initial_program.clone();
        let result = self.evaluator.evaluate(&program);
        if !result.valid && !self.config.allow_invalid_seed {
            return Err(Error::Startup(format!(
                "initial program is invalid ({:?}): {}",
                result.failure_reason, result.log_excerpt
            )));
        }
        let valid = usize::from(result.valid);
        let stamp = self.config.clock.stamp(CandidateId(0));
        let seed = Candidate::new(None, 0, program, "seed", stamp).with_result(result);
        self.insert(seed)?;
        self.record_point(0);
        self.emit_progress(0, 1, valid);
        self.persist_report(StopReason::Budget)
    }

    fn target_met(&self) -> bool {
        match (self.config.target_score, self.trajectory.last()) {
            (Some(target), Some(p)) => self.config.direction.meets(p.best_score, target),
            _ => false,
        }
    }

    fn iteration_rng(&self, iteration: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration);
        rng
    }

    fn plan(&self, iteration: u64) -> Result<Vec<Planned>> {
        let mut rng = self.iteration_rng(iteration);
        let mut plans = Vec::with_capacity(self.config.parallelism);
        for _ in 0..self.config.parallelism {
            let parent = match select_parent(&self.db, self.config.direction, &self.config.selection, &mut rng) {
                Ok(p) => p,
                // only reachable with an invalid seed and no valid child yet
                Err(Error::EmptyResult) => self.db.get(CandidateId(0))?,
                Err(e) => return Err(e),
            };
            let model_id = route_model(&self.providers.ensemble, &mut rng).to_owned();
            let seed: u64 = rng.random();
            let request = GenerationRequest {
                prompt: self.prompt_for(parent)?,
                model_id,
                max_output_tokens: self.providers.max_output_tokens,
                temperature: self.providers.temperature,
                seed,
            };
            plans.push(Planned {
                parent_id: parent.id,
                request,
            });
        }
        Ok(plans)
    }

    fn prompt_for(&self, parent: &Candidate) -> Result<PromptBundle> {
        let lineage = self.db.lineage(parent.id)?;
        let skip = lineage.len().saturating_sub(self.config.history_cap);
        let history = lineage
            .iter()
            .skip(skip)
            .map(|c| {
                let summary = match c.parent_id {
                    Some(p) => diff_summary(&self.db.get(p)?.program, &c.program),
                    None => "initial program".to_owned(),
                };
                Ok(HistoryEntry {
                    score: c.usable_score(),
                    summary,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptBundle {
            task_prompt: self.config.task_prompt.clone(),
            parent_program: parent.program.clone(),
            parent_score: parent.usable_score(),
            history,
        })
    }

    fn run_iteration(&mut self, iteration: u64) -> Result<(usize, usize)> {
        let plans = self.plan(iteration)?;
        let provider = &*self.providers.provider;
        let evaluator = self.evaluator;
        let pipeline = |plan: &Planned| -> Outcome {
            let program = provider.generate(&plan.request)?;
            if program.trim().is_empty() {
                return Err(GenerationError::Empty);
            }
            let result = evaluator.evaluate(&program);
            Ok((program, result))
        };
        let outcomes: Vec<Outcome> = if plans.len() == 1 {
            vec![pipeline(&plans[0])]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = plans.iter().map(|p| s.spawn(move || pipeline(p))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(GenerationError::Rejected("pipeline panicked".into()))))
                    .collect()
            })
        };

        let (mut generated, mut valid) = (0, 0);
        for (plan, outcome) in plans.into_iter().zip(outcomes) {
            self.attempts += 1;
            match outcome {
                Ok((program, result)) => {
                    generated += 1;
                    valid += usize::from(result.valid);
                    let stamp = self.config.clock.stamp(CandidateId(self.db.len() as u64));
                    let c = Candidate::new(Some(plan.parent_id), iteration, program, plan.request.model_id, stamp)
                        .with_result(result);
                    self.insert(c)?;
                }
                Err(e) => {
                    tracing::warn!(iteration, model = %plan.request.model_id, "generation failed: {e}");
                }
            }
        }
        Ok((generated, valid))
    }

    fn insert(&mut self, candidate: Candidate) -> Result<CandidateId> {
        let id = self.db.insert(candidate)?;
        if let Some(store) = &mut self.store {
            store.append(self.db.get(id)?)?;
        }
        Ok(id)
    }

    fn record_point(&mut self, iteration: u64) {
        if let Ok(best) = self.db.best(self.config.direction) {
            let score = best.usable_score().unwrap_or(f64::NAN);
            self.trajectory.push(TrajectoryPoint {
                iteration,
                attempts_cumulative: self.attempts,
                best_score: score,
                best_id: best.id,
            });
        }
    }

    fn emit_progress(&mut self, iteration: u64, generated: usize, valid: usize) {
        let line = ProgressLine {
            iteration,
            best_score: self.trajectory.last().map(|p| p.best_score),
            attempts: self.attempts,
            generated,
            valid,
        };
        if let Some(out) = &mut self.progress {
            if let Ok(json) = serde_json::to_string(&line) {
                let _ = writeln!(out, "{json}");
                let _ = out.flush();
            }
        }
    }

    fn report(&self, stop_reason: StopReason) -> RunReport {
        RunReport {
            best_candidate_id: self.trajectory.last().map(|p| p.best_id),
            best_score_trajectory: self.trajectory.clone(),
            attempts: self.attempts,
            iterations_used: self.iterations_used,
            stop_reason,
            direction: self.config.direction,
            parallelism: self.config.parallelism,
        }
    }

    fn persist_report(&self, stop_reason: StopReason) -> Result<()> {
        match &self.store {
            Some(store) => store.write_report(&self.report(stop_reason)),
            None => Ok(()),
        }
    }
}

/// The provider set and evaluator described by `config`.
pub fn components(config: &RunConfig) -> Result<(ProviderSet, Box<dyn Evaluator>)> {
    config.validate()?;
    let providers = ProviderSet::from_config(&config.provider, &config.model_weights)?;
    let evaluator = config
        .evaluator
        .build(config.direction, config.timeout_s, config.clock)?;
    Ok((providers, evaluator))
}

/// Runs a full in-memory discovery loop with default options.
pub fn run_discovery(
    config: &RunConfig,
    providers: &ProviderSet,
    evaluator: &dyn Evaluator,
) -> Result<RunReport> {
    Discovery::new(config, providers, evaluator)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Clock, EvaluationResult};

    fn db_with(scores: &[f64]) -> ProgramDatabase {
        let mut db = ProgramDatabase::new();
        for (i, &s) in scores.iter().enumerate() {
            let parent = (i > 0).then_some(CandidateId(0));
            let c = Candidate::new(parent, i as u64, "p", "m", Clock::Logical.stamp(CandidateId(0)))
                .with_result(EvaluationResult::valid(s, Direction::Maximize));
            db.insert(c).unwrap();
        }
        db
    }

    #[test]
    fn greedy_policy_always_picks_best() {
        let db = db_with(&[1.0, 3.0, 2.0]);
        let policy = SelectionPolicy { epsilon: 0.0, top_k: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(select_parent(&db, Direction::Maximize, &policy, &mut rng).unwrap().id, CandidateId(1));
        }
    }

    #[test]
    fn single_candidate_always_selected() {
        let db = db_with(&[4.0]);
        let policy = SelectionPolicy { epsilon: 1.0, top_k: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(select_parent(&db, Direction::Maximize, &policy, &mut rng).unwrap().id, CandidateId(0));
        }
    }

    #[test]
    fn exploration_is_uniform_over_top_k() {
        // Binomial(1000, 0.5): sd = sqrt(250) ~ 15.81; 5 sigma ~ 79.
        let db = db_with(&[1.0, 3.0, 2.0]);
        let policy = SelectionPolicy { epsilon: 1.0, top_k: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            counts[select_parent(&db, Direction::Maximize, &policy, &mut rng).unwrap().id.index()] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!(counts[1].abs_diff(500) <= 79, "{counts:?}");
        assert!(counts[2].abs_diff(500) <= 79, "{counts:?}");
    }

    #[test]
    fn no_valid_candidate_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            select_parent(&ProgramDatabase::new(), Direction::Maximize, &SelectionPolicy::default(), &mut rng),
            Err(Error::EmptyResult)
        ));
    }

    #[test]
    fn iteration_accounting() {
        assert_eq!(count_iterations(460, 4), 115);
        assert_eq!(count_iterations(5, 1), 5);
        assert_eq!(count_iterations(7, 2), 4);
    }

    #[test]
    fn speedup_and_improvement() {
        assert_eq!(compute_speedup(115.0, 5.0), 23.0);
        assert_eq!(compute_speedup(10.0, 10.0), 1.0);
        assert!((compute_speedup(115.0, 6.0) - 19.166_666_666_666_668).abs() < 1e-12);
        let p = percent_improvement(96.8, 95.2);
        assert!((p - 1.652_892_561_983_47).abs() < 1e-9, "{p}");
        assert_eq!((p * 10.0).trunc() / 10.0, 1.6);
        assert_eq!(percent_improvement(100.0, 100.0), 0.0);
        assert_eq!(percent_improvement(2.0, 1.0), 50.0);
    }

    #[test]
    fn diff_summary_counts_lines() {
        assert_eq!(diff_summary("a\nb\nc\n", "a\nx\nc\ny\n"), "+2 -1 lines");
        assert_eq!(diff_summary("a\n", "a\n"), "+0 -0 lines");
    }

    #[test]
    fn prompt_rendering_mentions_score_and_fence() {
        let p = PromptBundle {
            task_prompt: "t".into(),
            parent_program: "packing n=0\n".into(),
            parent_score: Some(0.5),
            history: vec![HistoryEntry { score: None, summary: "initial program".into() }],
        };
        let msg = p.render_user_message();
        assert!(msg.contains("score 0.5"));
        assert!(msg.contains("```\npacking n=0\n```"));
        assert!(msg.contains("- score invalid: initial program"));
    }

    proptest::proptest! {
        #[test]
        fn iterations_cover_attempts(a in 1u64..1_000_000, p in 1u64..64) {
            proptest::prop_assert_eq!(count_iterations(a, 1), a);
            let it = count_iterations(a, p);
            proptest::prop_assert!(it * p >= a);
            proptest::prop_assert!((it - 1) * p < a);
        }

        #[test]
        fn speedup_is_scale_invariant(b in 1u32..10_000, o in 1u32..10_000, m in 1u32..1000) {
            let (b, o, m) = (b as f64, o as f64, m as f64);
            let base = compute_speedup(b, o);
            proptest::prop_assert!((compute_speedup(m * b, m * o) - base).abs() <= 1e-12 * base);
        }
    }
}
