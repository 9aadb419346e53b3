//! Metric transforms shared by multi-metric evaluators: normalize-then-average
//! aggregation and inclusive upper-bound validity rules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Normalizer {
    Identity,
    /// `c / x`; turns a lower-is-better error into a higher-is-better ratio.
    Reciprocal { c: f64 },
}

impl Normalizer {
    pub fn apply(self, name: &str, x: f64) -> Result<f64> {
        match self {
            Normalizer::Identity => Ok(x),
            Normalizer::Reciprocal { c } => {
                if x == 0.0 {
                    Err(Error::DivisionByZero(name.to_owned()))
                } else {
                    Ok(c / x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub metric: String,
    pub max: f64,
}

impl ThresholdRule {
    pub fn new(metric: impl Into<String>, max: f64) -> Self {
        ThresholdRule {
            metric: metric.into(),
            max,
        }
    }
}

/// Arithmetic mean of the normalized metrics named in `normalizers`.
///
/// Summation follows the normalizers' name order, so the result does not
/// depend on how `metrics` was built.
pub fn mean_of_normalized(
    metrics: &BTreeMap<String, f64>,
    normalizers: &BTreeMap<String, Normalizer>,
) -> Result<f64> {
    if normalizers.is_empty() {
        return Err(Error::config("normalizers", "needs at least one metric"));
    }
    let mut sum = 0.0;
    for (name, norm) in normalizers {
        let x = *metrics
            .get(name)
            .ok_or_else(|| Error::MissingMetric(name.clone()))?;
        sum += norm.apply(name, x)?;
    }
    Ok(sum / normalizers.len() as f64)
}

/// `true` iff every rule's metric is at most its bound (inclusive).
pub fn threshold_validity(metrics: &BTreeMap<String, f64>, rules: &[ThresholdRule]) -> Result<bool> {
    let mut ok = true;
    for rule in rules {
        let x = *metrics
            .get(&rule.metric)
            .ok_or_else(|| Error::MissingMetric(rule.metric.clone()))?;
        ok &= x <= rule.max;
    }
    Ok(ok)
}
