//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use discover_core::harness::EvaluatorSpec;
use discover_core::tasks::{Packing, StepFunction};
use discover_core::{Clock, Direction, RunConfig, TaskId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Length of `[a0, a1] ∩ [b0, b1]`.
fn overlap_len(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// `∫ f(x) g(x + k) dx` for step functions with common piece width `h`
/// starting at 0, integrated exactly piece by piece.
fn shifted_inner_product(f: &[f64], g: &[f64], h: f64, k: f64) -> f64 {
    let mut total = 0.0;
    for (i, &fi) in f.iter().enumerate() {
        if fi == 0.0 {
            continue;
        }
        let (a0, a1) = (i as f64 * h, (i + 1) as f64 * h);
        // piece j of g, seen in x coordinates, is [j h - k, (j+1) h - k]
        let first = (((a0 + k) / h).floor() as isize - 1).max(0);
        let last = (((a1 + k) / h).ceil() as isize + 1).min(g.len() as isize - 1);
        for j in first..=last {
            let j = j as usize;
            let (b0, b1) = (j as f64 * h - k, (j + 1) as f64 * h - k);
            total += fi * g[j] * overlap_len(a0, a1, b0, b1);
        }
    }
    total
}

/// `(f * f)(t) = ∫ f(x) f(t - x) dx`, integrated exactly piece by piece.
fn self_convolution_at(f: &[f64], h: f64, t: f64) -> f64 {
    let mut total = 0.0;
    for (i, &fi) in f.iter().enumerate() {
        if fi == 0.0 {
            continue;
        }
        let (a0, a1) = (i as f64 * h, (i + 1) as f64 * h);
        let first = (((t - a1) / h).floor() as isize - 1).max(0);
        let last = (((t - a0) / h).ceil() as isize + 1).min(f.len() as isize - 1);
        for j in first..=last {
            let j = j as usize;
            // t - x in piece j  <=>  x in [t - (j+1) h, t - j h]
            let (b0, b1) = (t - (j + 1) as f64 * h, t - j as f64 * h);
            total += fi * f[j] * overlap_len(a0, a1, b0, b1);
        }
    }
    total
}

/// Max over a dense shift grid of step `2 / (64 m)` of the complement
/// correlation, `k` in [-2, 2].
pub fn brute_complement(values: &[f64]) -> f64 {
    let m = values.len();
    let h = 2.0 / m as f64;
    let g: Vec<f64> = values.iter().map(|v| 1.0 - v).collect();
    let steps = 128 * m;
    (0..=steps)
        .map(|s| {
            let k = -2.0 + s as f64 * (4.0 / steps as f64);
            shifted_inner_product(values, &g, h, k)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Max over a dense grid of step `2 / (64 m)` of `f * f` on [0, 4].
pub fn brute_convolution(values: &[f64]) -> f64 {
    let m = values.len();
    let h = 2.0 / m as f64;
    let steps = 128 * m;
    (0..=steps)
        .map(|s| self_convolution_at(values, h, s as f64 * (4.0 / steps as f64)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random values in [0, 1] with mean exactly 1/2 up to rounding, via an
/// affine squeeze toward 0 or toward 1.
pub fn random_step(rng: &mut impl Rng, m: usize) -> StepFunction {
    let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let mean = w.iter().sum::<f64>() / m as f64;
    let values = if mean >= 0.5 {
        w.iter().map(|x| x * 0.5 / mean).collect()
    } else {
        w.iter().map(|x| 1.0 - (1.0 - x) * 0.5 / (1.0 - mean)).collect()
    };
    StepFunction::new(values)
}

/// Greedy random feasible packing: each radius is a random fraction of the
/// largest radius that keeps it clear of the walls and of earlier circles.
pub fn random_feasible_packing(rng: &mut impl Rng, n: usize) -> Packing {
    let mut circles: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    while circles.len() < n {
        let x: f64 = rng.random_range(0.02..0.98);
        let y: f64 = rng.random_range(0.02..0.98);
        let mut r_max = x.min(1.0 - x).min(y).min(1.0 - y);
        for &(cx, cy, cr) in &circles {
            r_max = r_max.min(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - cr);
        }
        if r_max <= 1e-6 {
            continue;
        }
        circles.push((x, y, r_max * rng.random_range(0.1..0.99)));
    }
    Packing::from_circles(&circles).unwrap()
}

pub type PointMap = fn(f64, f64) -> (f64, f64);

/// The 8 symmetries of the unit square acting on a point.
pub fn square_symmetries() -> [PointMap; 8] {
    [
        |x, y| (x, y),
        |x, y| (1.0 - y, x),
        |x, y| (1.0 - x, 1.0 - y),
        |x, y| (y, 1.0 - x),
        |x, y| (1.0 - x, y),
        |x, y| (x, 1.0 - y),
        |x, y| (y, x),
        |x, y| (1.0 - y, 1.0 - x),
    ]
}

pub fn transform(p: &Packing, map: PointMap) -> Packing {
    let circles: Vec<_> = p
        .circles()
        .map(|(x, y, r)| {
            let (u, v) = map(x, y);
            (u, v, r)
        })
        .collect();
    Packing::from_circles(&circles).unwrap()
}

/// 26 small circles on a loose grid; feasible, far from optimal.
pub fn grid26() -> String {
    let circles: Vec<(f64, f64, f64)> = (0..26)
        .map(|i| {
            let (row, col) = (i / 6, i % 6);
            (0.1 + 0.16 * col as f64, 0.1 + 0.2 * row as f64, 0.05)
        })
        .collect();
    Packing::from_circles(&circles).unwrap().to_text()
}

pub fn packing_config(initial: String, max_iterations: u64, parallelism: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(
        "Maximize the sum of radii of circles packed in the unit square.",
        initial,
        EvaluatorSpec::builtin(TaskId::CirclePacking),
        Direction::Maximize,
    );
    c.max_iterations = max_iterations;
    c.parallelism = parallelism;
    c.seed = seed;
    c.clock = Clock::Logical;
    c
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Recursive directory copy.
pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// True if `pid` no longer runs: gone, or a zombie awaiting its reaper.
pub fn process_gone(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Err(_) => true,
        Ok(stat) => {
            // state follows the parenthesised command name
            let state = stat.rsplit_once(')').and_then(|(_, rest)| rest.split_whitespace().next());
            matches!(state, Some("Z") | Some("X"))
        }
    }
}
