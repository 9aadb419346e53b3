//! Circles in the unit square, scored by the sum of radii.
//!
//! Candidate text format:
//!
//! ```text
//! packing n=<n>
//! <x> <y> <r>      (n lines)
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Packing {
    centers: Vec<(f64, f64)>,
    radii: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Boundary { circle: usize, side: Side },
    Overlap { first: usize, second: usize, distance: f64, radius_sum: f64 },
}

impl Packing {
    pub fn new(centers: Vec<(f64, f64)>, radii: Vec<f64>) -> Result<Self> {
        if centers.len() != radii.len() {
            return Err(Error::Format(format!(
                "{} centers but {} radii",
                centers.len(),
                radii.len()
            )));
        }
        for (i, (&(x, y), &r)) in centers.iter().zip(&radii).enumerate() {
            if !(x.is_finite() && y.is_finite() && r.is_finite()) {
                return Err(Error::Format(format!("circle {i} has a non-finite value")));
            }
            if r < 0.0 {
                return Err(Error::Format(format!("circle {i} has negative radius {r}")));
            }
        }
        Ok(Packing { centers, radii })
    }

    pub fn from_circles(circles: &[(f64, f64, f64)]) -> Result<Self> {
        Packing::new(
            circles.iter().map(|&(x, y, _)| (x, y)).collect(),
            circles.iter().map(|&(_, _, r)| r).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.radii.len()
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn circles(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.centers.iter().zip(&self.radii).map(|(&(x, y), &r)| (x, y, r))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty packing program".into()))?;
        let n: usize = header
            .strip_prefix("packing n=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("bad packing header {header:?}")))?;
        let mut circles = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(Error::Format(format!("more than {n} circle lines")));
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Format(format!("circle {i}: bad number {tok:?}")))
                })
                .collect::<Result<_>>()?;
            let [x, y, r] = vals[..] else {
                return Err(Error::Format(format!(
                    "circle {i}: expected `x y r`, got {line:?}"
                )));
            };
            circles.push((x, y, r));
        }
        if circles.len() != n {
            return Err(Error::Format(format!(
                "header says {n} circles, found {}",
                circles.len()
            )));
        }
        Packing::from_circles(&circles)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("packing n={}\n", self.n());
        for (x, y, r) in self.circles() {
            let _ = writeln!(out, "{x} {y} {r}");
        }
        out
    }
}

/// Every boundary crossing and pairwise overlap beyond `tol`. Empty means feasible.
pub fn validate_packing(p: &Packing, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, (x, y, r)) in p.circles().enumerate() {
        let sides = [
            (x - r < -tol, Side::Left),
            (x + r > 1.0 + tol, Side::Right),
            (y - r < -tol, Side::Bottom),
            (y + r > 1.0 + tol, Side::Top),
        ];
        for (crossed, side) in sides {
            if crossed {
                out.push(Violation::Boundary { circle: i, side });
            }
        }
    }
    let circles: Vec<_> = p.circles().collect();
    for i in 0..circles.len() {
        let (xi, yi, ri) = circles[i];
        for (j, &(xj, yj, rj)) in circles.iter().enumerate().skip(i + 1) {
            let (dx, dy) = (xi - xj, yi - yj);
            let distance = (dx * dx + dy * dy).sqrt();
            let radius_sum = ri + rj;
            if distance < radius_sum - tol {
                out.push(Violation::Overlap {
                    first: i,
                    second: j,
                    distance,
                    radius_sum,
                });
            }
        }
    }
    out
}

/// Sum of radii of a feasible packing at the default tolerance.
pub fn score_packing(p: &Packing) -> Result<f64> {
    score_packing_with_tol(p, DEFAULT_TOL)
}

pub fn score_packing_with_tol(p: &Packing, tol: f64) -> Result<f64> {
    if p.n() == 0 {
        return Err(Error::Constraint("packing has no circles".into()));
    }
    let violations = validate_packing(p, tol);
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    Ok(p.radii.iter().sum())
}
