//! Minimum-overlap bound for step functions on [0, 2].
//!
//! A candidate is `f` with `m` equal pieces of width `h = 2/m`, values in
//! [0, 1] and unit integral. Two objectives are supported:
//!
//! * complement correlation: `max_k ∫ f(x) (1 - f(x + k)) dx`, with `1 - f`
//!   vanishing outside [0, 2];
//! * self convolution: `max_t (f * f)(t)` for `t` in [0, 4].
//!
//! Both objectives are correlations of step functions on a common grid, so
//! they are piecewise linear in the shift with knots at multiples of `h`. The
//! maximum is therefore attained at a knot and is found by enumerating all
//! `2m + 1` knots, never by sampling.
//!
//! Knot sums use [`symmetric_sum`], which is invariant under reversing the
//! term sequence. Reversing `f` maps each knot's term sequence onto the
//! reversed sequence of the mirrored knot, so the score of a reflected
//! function is bit-identical to the original.
//!
//! Candidate text format:
//!
//! ```text
//! step m=<m>
//! <v_0> <v_1> ... <v_{m-1}>   (any whitespace)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNIT_INTEGRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    SelfConvolution,
    #[default]
    ComplementCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub value: f64,
    /// Maximizing shift: `k` in [-2, 2] for the complement correlation,
    /// `t` in [0, 4] for the self convolution. Smallest knot wins ties.
    pub argmax_shift: f64,
    pub formulation: Formulation,
}

impl StepFunction {
    /// Wraps `values` without checking invariants; see [`StepFunction::validate`].
    pub fn new(values: Vec<f64>) -> Self {
        StepFunction { values }
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn width(&self) -> f64 {
        2.0 / self.m() as f64
    }

    pub fn integral(&self) -> f64 {
        self.width() * self.values.iter().sum::<f64>()
    }

    pub fn reversed(&self) -> Self {
        StepFunction::new(self.values.iter().rev().copied().collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Constraint("step function has no pieces".into()));
        }
        if let Some((i, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Constraint(format!("piece {i} has value {v} outside [0, 1]")));
        }
        if !check_unit_integral(self, UNIT_INTEGRAL_TOL) {
            return Err(Error::Constraint(format!(
                "integral is {}, expected 1",
                self.integral()
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let (Some("step"), Some(m_tok)) = (tokens.next(), tokens.next()) else {
            return Err(Error::Format("expected header `step m=<m>`".into()));
        };
        let m: usize = m_tok
            .strip_prefix("m=")
            .and_then(|m| m.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad piece count {m_tok:?}")))?;
        let values = tokens
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format(format!("bad value {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != m {
            return Err(Error::Format(format!(
                "header says {m} pieces, found {}",
                values.len()
            )));
        }
        Ok(StepFunction::new(values))
    }

    /// One value per line after the header.
    pub fn to_text(&self) -> String {
        let mut out = format!("step m={}\n", self.m());
        for v in &self.values {
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

pub fn check_unit_integral(f: &StepFunction, tol: f64) -> bool {
    f.m() > 0 && (f.integral() - 1.0).abs() <= tol
}

/// Sums `len` terms pairing the outermost remaining terms first.
///
/// The result depends only on the multiset of pairs `{term(i), term(len-1-i)}`
/// and their order from the outside in, so reversing the sequence gives the
/// identical float.
pub fn symmetric_sum(len: usize, term: impl Fn(usize) -> f64) -> f64 {
    let (mut lo, mut hi) = (0, len);
    let mut acc = 0.0;
    while hi - lo >= 2 {
        acc += term(lo) + term(hi - 1);
        lo += 1;
        hi -= 1;
    }
    if hi > lo {
        acc += term(lo);
    }
    acc
}

pub fn score_overlap(f: &StepFunction, formulation: Formulation) -> Result<OverlapScore> {
    f.validate()?;
    let m = f.m() as isize;
    let h = f.width();
    let v = f.values();

    // (knot index, raw sum) with the smallest knot winning ties
    let mut best = (0isize, f64::NEG_INFINITY);
    let mut consider = |knot: isize, sum: f64| {
        if sum > best.1 {
            best = (knot, sum);
        }
    };

    match formulation {
        Formulation::ComplementCorrelation => {
            // knot j: shift k = j*h, sum_i f_i (1 - f_{i+j})
            for j in -m..=m {
                let lo = 0.max(-j);
                let hi = m.min(m - j);
                let len = (hi - lo).max(0) as usize;
                let sum = symmetric_sum(len, |t| {
                    let i = lo as usize + t;
                    v[i] * (1.0 - v[(i as isize + j) as usize])
                });
                consider(j, sum);
            }
        }
        Formulation::SelfConvolution => {
            // knot s: t = s*h, sum_{a+b=s-1} f_a f_b
            for s in 0..=2 * m {
                let total = s - 1;
                let lo = 0.max(total - (m - 1));
                let hi = (m - 1).min(total);
                let len = (hi - lo + 1).max(0) as usize;
                let sum = symmetric_sum(len, |t| {
                    let a = lo as usize + t;
                    v[a] * v[(total - a as isize) as usize]
                });
                consider(s, sum);
            }
        }
    }

    let (knot, sum) = best;
    Ok(OverlapScore {
        value: h * sum,
        argmax_shift: knot as f64 * h,
        formulation,
    })
}

/// Largest number of pairs `(a, b)` in `A x B` sharing one difference `a - b`,
/// where `B` is the complement of `A` in `{1, .., 2n}`. Exhaustive count.
pub fn discrete_overlap_oracle(n: usize, a: &[usize]) -> Result<usize> {
    if a.len() != n {
        return Err(Error::Constraint(format!("|A| = {}, expected {n}", a.len())));
    }
    let mut in_a = vec![false; 2 * n + 1];
    for &x in a {
        if x == 0 || x > 2 * n {
            return Err(Error::Constraint(format!("{x} is outside 1..={}", 2 * n)));
        }
        if std::mem::replace(&mut in_a[x], true) {
            return Err(Error::Constraint(format!("{x} repeated in A")));
        }
    }
    // differences lie in [-(2n-1), 2n-1]; offset by 2n
    let mut counts = vec![0usize; 4 * n + 1];
    for x in 1..=2 * n {
        if !in_a[x] {
            continue;
        }
        for y in (1..=2 * n).filter(|&y| !in_a[y]) {
            counts[x + 2 * n - y] += 1;
        }
    }
    Ok(counts.into_iter().max().unwrap_or(0))
}

/// Indicator step function of `A ⊆ {1, .., 2n}`: piece `i` (1-based) is 1 iff `i ∈ A`.
pub fn indicator_of(n: usize, a: &[usize]) -> StepFunction {
    let mut values = vec![0.0; 2 * n];
    for &x in a {
        values[x - 1] = 1.0;
    }
    StepFunction::new(values)
}
