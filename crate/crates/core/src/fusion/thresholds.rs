use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ProbVector;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, f_beta, precision_recall, Averaging, ClassCounts};
use crate::taxonomy::LabelSet;

/// Per-class decision thresholds in the open interval `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidParameter("thresholds must lie in (0, 1)".into()));
        }
        Ok(ThresholdVector(t))
    }

    pub fn uniform(n: usize, t: f64) -> Result<Self> {
        Self::new(vec![t; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    PerClass,
    Global,
}

/// `{step, 2·step, …}` strictly below 1.
///
/// When `1/step` is an integer `m` the points are computed as `k/m`, so the
/// grid hits 0.5 exactly for even `m`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::InvalidParameter(format!("grid step {step} outside (0, 1)")));
    }
    let m = (1.0 / step).round();
    if (m * step - 1.0).abs() < 1e-9 {
        let m = m as usize;
        return Ok((1..m).map(|k| k as f64 / m as f64).collect());
    }
    Ok((1..)
        .map(|k| k as f64 * step)
        .take_while(|&t| t < 1.0)
        .collect())
}

/// `p_j ≥ t_j` sets bit `j`.
pub fn apply_thresholds(p: &ProbVector, t: &ThresholdVector) -> Result<LabelSet> {
    if p.len() != t.len() {
        return Err(Error::LengthMismatch {
            what: "thresholds",
            expected: p.len(),
            found: t.len(),
        });
    }
    Ok(LabelSet::from_bits(
        p.as_slice().iter().zip(t.as_slice()).map(|(&p, &t)| p >= t).collect(),
    ))
}

fn check_validation(probs: &[ProbVector], labels: &[LabelSet]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "validation labels",
            expected: probs.len(),
            found: labels.len(),
        });
    }
    let n = probs[0].len();
    for (p, l) in probs.iter().zip(labels) {
        if p.len() != n || l.len() != n {
            return Err(Error::LengthMismatch {
                what: "validation vector",
                expected: n,
                found: if p.len() != n { p.len() } else { l.len() },
            });
        }
    }
    Ok(n)
}

/// Larger score wins; ties go to the threshold closest to 0.5, then the lower one.
fn better(candidate: (f64, f64), incumbent: (f64, f64)) -> bool {
    let (cs, ct) = candidate;
    let (is, it) = incumbent;
    match cs.partial_cmp(&is).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            let (dc, di) = ((ct - 0.5).abs(), (it - 0.5).abs());
            dc < di || (dc == di && ct < it)
        }
    }
}

fn class_f_beta(probs: &[ProbVector], labels: &[LabelSet], j: usize, t: f64, beta: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, l) in probs.iter().zip(labels) {
        match (p.get(j) >= t, l.get(j)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let (pr, rc) = precision_recall(tp, fp, fn_);
    f_beta(pr, rc, beta)
}

/// Independently per class, the grid threshold maximizing validation F_beta.
pub fn optimize_thresholds(
    probs: &[ProbVector],
    labels: &[LabelSet],
    beta: f64,
    grid_step: f64,
) -> Result<ThresholdVector> {
    let n = check_validation(probs, labels)?;
    let grid = threshold_grid(grid_step)?;
    let best: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut best = (f64::NEG_INFINITY, 0.5);
            for &t in &grid {
                let cand = (class_f_beta(probs, labels, j, t, beta), t);
                if better(cand, best) {
                    best = cand;
                }
            }
            best.1
        })
        .collect();
    ThresholdVector::new(best)
}

/// One shared grid threshold maximizing validation F_beta-macro.
pub fn optimize_global_threshold(
    probs: &[ProbVector],
    labels: &[LabelSet],
    beta: f64,
    grid_step: f64,
) -> Result<ThresholdVector> {
    let n = check_validation(probs, labels)?;
    let grid = threshold_grid(grid_step)?;
    let mut best = (f64::NEG_INFINITY, 0.5);
    for &t in &grid {
        let scores: Vec<f64> = (0..n).map(|j| class_f_beta(probs, labels, j, t, beta)).collect();
        let macro_f = aggregate(&scores, &ClassCounts::zeros(n), beta, Averaging::Macro)?;
        if better((macro_f, t), best) {
            best = (macro_f, t);
        }
    }
    ThresholdVector::uniform(n, best.1)
}
