//! Offline stand-in for an LLM: seeded Gaussian perturbation of the numeric
//! parameters of a built-in task program.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tasks::{Packing, StepFunction, TaskProgram};

use super::{GenerationError, GenerationRequest, Provider};

#[derive(Debug, Clone)]
pub struct MockProvider {
    step_scale: f64,
}

impl MockProvider {
    pub fn new(step_scale: f64) -> Self {
        MockProvider { step_scale }
    }
}

impl Provider for MockProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<String, GenerationError> {
        mock_mutate(&request.prompt.parent_program, request.seed, self.step_scale)
            .map_err(|e| GenerationError::Format(e.to_string()))
    }
}

/// Perturbs a seeded subset of parameters by `N(0, step_scale²)` steps.
///
/// Out-of-range results are clamped: radii to `>= 0`, centers into the unit
/// square and each radius to its wall distance; step values are projected back
/// onto `[0, 1]` with unit integral. A zero `step_scale` returns the parent
/// unchanged. Pure in `(parent, seed, step_scale)`.
pub fn mock_mutate(parent: &str, seed: u64, step_scale: f64) -> Result<String> {
    let program = TaskProgram::parse(parent)?;
    if step_scale == 0.0 {
        return Ok(parent.to_owned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mutated = match program {
        TaskProgram::Packing(p) => TaskProgram::Packing(mutate_packing(&p, &mut rng, step_scale)?),
        TaskProgram::Step(f) => TaskProgram::Step(mutate_step(&f, &mut rng, step_scale)?),
    };
    Ok(mutated.to_text())
}

fn perturb(params: &mut [f64], rng: &mut ChaCha8Rng, step_scale: f64) {
    if params.is_empty() {
        return;
    }
    let upper = (params.len() / 16).max(4).min(params.len());
    let count = rng.random_range(1..=upper);
    for i in sample(rng, params.len(), count).into_vec() {
        let z: f64 = rng.sample(StandardNormal);
        params[i] += step_scale * z;
    }
}

fn mutate_packing(p: &Packing, rng: &mut ChaCha8Rng, step_scale: f64) -> Result<Packing> {
    let mut params: Vec<f64> = p.circles().flat_map(|(x, y, r)| [x, y, r]).collect();
    perturb(&mut params, rng, step_scale);
    let circles: Vec<(f64, f64, f64)> = params
        .chunks_exact(3)
        .map(|c| {
            let x = c[0].clamp(0.0, 1.0);
            let y = c[1].clamp(0.0, 1.0);
            let r = c[2].max(0.0).min(x).min(1.0 - x).min(y).min(1.0 - y);
            (x, y, r)
        })
        .collect();
    Packing::from_circles(&circles)
}

fn mutate_step(f: &StepFunction, rng: &mut ChaCha8Rng, step_scale: f64) -> Result<StepFunction> {
    if f.m() == 0 {
        return Err(Error::Format("step function has no pieces".into()));
    }
    let mut values = f.values().to_vec();
    perturb(&mut values, rng, step_scale);
    Ok(StepFunction::new(project_unit_integral(&values)))
}

/// Euclidean projection onto `{v in [0,1]^m : sum v = m/2}`, i.e.
/// `clamp(v + λ, 0, 1)` with `λ` found by bisection.
pub(crate) fn project_unit_integral(values: &[f64]) -> Vec<f64> {
    let target = values.len() as f64 / 2.0;
    let mass = |shift: f64| -> f64 { values.iter().map(|v| (v + shift).clamp(0.0, 1.0)).sum() };
    let (mut lo, mut hi) = (-1.0 - max_abs(values), 1.0 + max_abs(values));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = if (mass(lo) - target).abs() <= (mass(hi) - target).abs() { lo } else { hi };
    values.iter().map(|v| (v + shift).clamp(0.0, 1.0)).collect()
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::overlap::{check_unit_integral, UNIT_INTEGRAL_TOL};
    use crate::tasks::packing::{validate_packing, DEFAULT_TOL};

    fn grid26() -> String {
        let mut circles = Vec::new();
        for i in 0..26 {
            let (row, col) = (i / 6, i % 6);
            circles.push((0.1 + 0.16 * col as f64, 0.1 + 0.2 * row as f64, 0.05));
        }
        Packing::from_circles(&circles).unwrap().to_text()
    }

    #[test]
    fn zero_scale_is_identity() {
        let parent = grid26();
        assert_eq!(mock_mutate(&parent, 9, 0.0).unwrap(), parent);
    }

    #[test]
    fn deterministic_per_seed() {
        let parent = grid26();
        let a = mock_mutate(&parent, 17, 0.05).unwrap();
        assert_eq!(a, mock_mutate(&parent, 17, 0.05).unwrap());
        assert_ne!(a, parent);
        assert_ne!(a, mock_mutate(&parent, 18, 0.05).unwrap());
    }

    #[test]
    fn packing_mutations_stay_in_square() {
        let parent = grid26();
        for seed in 0..200 {
            let child = Packing::parse(&mock_mutate(&parent, seed, 0.5).unwrap()).unwrap();
            let walls = validate_packing(&child, DEFAULT_TOL)
                .into_iter()
                .filter(|v| matches!(v, crate::tasks::Violation::Boundary { .. }))
                .count();
            assert_eq!(walls, 0, "seed {seed}");
        }
    }

    #[test]
    fn step_mutations_keep_invariants() {
        let parent = StepFunction::new(vec![0.5; 32]).to_text();
        for seed in 0..100 {
            let child = StepFunction::parse(&mock_mutate(&parent, seed, 0.3).unwrap()).unwrap();
            assert!(child.values().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(check_unit_integral(&child, UNIT_INTEGRAL_TOL), "seed {seed}: {}", child.integral());
        }
    }

    #[test]
    fn projection_handles_extremes() {
        let v = project_unit_integral(&[5.0, 5.0, -3.0, -3.0]);
        assert_eq!(v, [1.0, 1.0, 0.0, 0.0]);
        let v = project_unit_integral(&[0.9, 0.9]);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unparseable_parent_is_format_error() {
        assert!(matches!(mock_mutate("def f(): pass", 1, 0.1), Err(Error::Format(_))));
    }
}
