//! Evaluation metrics and the combined challenge score.

use alloc::format;
use alloc::vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// F1 from confusion counts; 0 when the class never occurs in either
/// predictions or labels.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// Unweighted mean of per-class F1 over `n_classes`.
pub fn macro_f1(pred: &[usize], label: &[usize], n_classes: usize, mask: &[bool]) -> Result<f64> {
    if pred.len() != label.len() || mask.len() != label.len() {
        return Err(Error::InvalidArgument(format!(
            "macro_f1: {} predictions, {} labels, {} mask entries",
            pred.len(),
            label.len(),
            mask.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut n = 0;
    for ((&p, &l), &m) in pred.iter().zip(label).zip(mask) {
        if !m {
            continue;
        }
        for c in [p, l] {
            if c >= n_classes {
                return Err(Error::ClassOutOfRange { label: c, n_classes });
            }
        }
        n += 1;
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask { what: "macro_f1" });
    }
    let total: f64 = (0..n_classes).map(|c| f1_from_counts(tp[c], fp[c], fn_[c])).sum();
    Ok(total / n_classes as f64)
}

/// F1 of the positive class of a binary problem.
pub fn binary_f1(pred: &[bool], label: &[bool], mask: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for ((&p, &l), &m) in pred.iter().zip(label).zip(mask) {
        if !m {
            continue;
        }
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// Mean of the per-unit positive-class F1 scores on `N×units` row-major data.
pub fn au_macro_f1(pred: &[bool], label: &[bool], mask: &[bool], units: usize) -> Result<f64> {
    if units == 0 || pred.len() != label.len() || mask.len() != label.len() || !label.len().is_multiple_of(units) {
        return Err(Error::InvalidArgument(format!(
            "au_macro_f1: {} predictions, {} labels over {units} units",
            pred.len(),
            label.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyMask { what: "au_macro_f1" });
    }
    let mut total = 0.0;
    for u in 0..units {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for i in (u..label.len()).step_by(units) {
            if !mask[i] {
                continue;
            }
            match (pred[i], label[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        total += f1_from_counts(tp, fp, fn_);
    }
    Ok(total / units as f64)
}

/// `(valence + arousal)/2 + expression F1 + AU F1`.
pub fn challenge_score(ccc_v: f64, ccc_a: f64, f1_expr: f64, f1_au: f64) -> f64 {
    (ccc_v + ccc_a) / 2.0 + f1_expr + f1_au
}

/// One row of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub f1_expr: f64,
    pub f1_au: f64,
    pub score: f64,
}

impl EvalReport {
    pub fn new(ccc_v: f64, ccc_a: f64, f1_expr: f64, f1_au: f64) -> Self {
        Self {
            ccc_v,
            ccc_a,
            f1_expr,
            f1_au,
            score: challenge_score(ccc_v, ccc_a, f1_expr, f1_au),
        }
    }

    pub fn va_mean(&self) -> f64 {
        (self.ccc_v + self.ccc_a) / 2.0
    }

    /// True when `score` equals the aggregation of the four parts.
    pub fn is_consistent(&self, tol: f64) -> bool {
        (self.score - challenge_score(self.ccc_v, self.ccc_a, self.f1_expr, self.f1_au)).abs() <= tol
    }
}
