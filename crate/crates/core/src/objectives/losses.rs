//! Training losses with analytic gradients with respect to the predictions.
//!
//! Every loss visits entries in index order and skips masked ones entirely,
//! so inserting masked entries anywhere leaves the result bit-identical.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability guard applied before logarithms in the AU loss.
pub const PROB_EPS: f64 = 1e-7;

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::InvalidArgument(format!("{what}: length {got}, expected {want}")));
    }
    Ok(())
}

/// Mean squared error over unmasked entries, with gradient.
pub fn mse_with_grad(pred: &[f64], label: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len("mse label", label.len(), pred.len())?;
    check_len("mse mask", mask.len(), pred.len())?;
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::EmptyMask { what: "mse" });
    }
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - label[i];
            total += d * d;
            grad[i] = 2.0 * d / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

pub fn mse(pred: &[f64], label: &[f64], mask: &[bool]) -> Result<f64> {
    mse_with_grad(pred, label, mask).map(|r| r.0)
}

/// Concordance correlation coefficient with population moments and its
/// gradient with respect to `x`.
///
/// When both inputs are constant the denominator vanishes: equal means give
/// 1, different means give 0 (through the zero covariance).
pub fn ccc_with_grad(x: &[f64], y: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len("ccc y", y.len(), x.len())?;
    check_len("ccc mask", mask.len(), x.len())?;
    let n = mask.iter().filter(|m| **m).count();
    if n < 2 {
        return Err(Error::EmptyMask { what: "ccc (needs at least two entries)" });
    }
    let nf = n as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..x.len() {
        if mask[i] {
            sx += x[i];
            sy += y[i];
        }
    }
    let (mx, my) = (sx / nf, sy / nf);
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        if mask[i] {
            let (dx, dy) = (x[i] - mx, y[i] - my);
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
    }
    vx /= nf;
    vy /= nf;
    cov /= nf;
    let shift = mx - my;
    let den = vx + vy + shift * shift;
    let mut grad = vec![0.0; x.len()];
    if den == 0.0 {
        return Ok((1.0, grad));
    }
    let num = 2.0 * cov;
    for i in 0..x.len() {
        if mask[i] {
            let dnum = 2.0 * (y[i] - my) / nf;
            let dden = 2.0 * (x[i] - mx) / nf + 2.0 * shift / nf;
            grad[i] = (dnum * den - num * dden) / (den * den);
        }
    }
    Ok((num / den, grad))
}

pub fn ccc(x: &[f64], y: &[f64], mask: &[bool]) -> Result<f64> {
    ccc_with_grad(x, y, mask).map(|r| r.0)
}

/// `1 − ccc`.
pub fn ccc_loss_with_grad(x: &[f64], y: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let (c, mut g) = ccc_with_grad(x, y, mask)?;
    g.iter_mut().for_each(|v| *v = -*v);
    Ok((1.0 - c, g))
}

fn column(data: &[f64], cols: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(cols).copied().collect()
}

fn column_mask(mask: &[bool], cols: usize, c: usize) -> Vec<bool> {
    mask.iter().skip(c).step_by(cols).copied().collect()
}

/// Valence/arousal loss on `N×2` row-major predictions:
/// `λ·MSE + (1−λ)·mean(1 − ccc_V, 1 − ccc_A)`, where the MSE runs over every
/// unmasked entry of both columns.
pub fn va_loss_with_grad(pred: &[f64], label: &[f64], mask: &[bool], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("VA mix weight must lie in [0, 1], got {lambda}")));
    }
    if !pred.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("VA predictions must have two columns".to_string()));
    }
    check_len("va label", label.len(), pred.len())?;
    check_len("va mask", mask.len(), pred.len())?;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    if lambda > 0.0 {
        let (m, g) = mse_with_grad(pred, label, mask)?;
        value += lambda * m;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += lambda * b);
    }
    if lambda < 1.0 {
        let w = (1.0 - lambda) / 2.0;
        for c in 0..2 {
            let (l, g) = ccc_loss_with_grad(
                &column(pred, 2, c),
                &column(label, 2, c),
                &column_mask(mask, 2, c),
            )?;
            value += w * l;
            for (i, gi) in g.iter().enumerate() {
                grad[i * 2 + c] += w * gi;
            }
        }
    }
    Ok((value, grad))
}

pub fn va_loss(pred: &[f64], label: &[f64], mask: &[bool], lambda: f64) -> Result<f64> {
    va_loss_with_grad(pred, label, mask, lambda).map(|r| r.0)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Cross-entropy summed over unmasked frames, with gradient. Returns the
/// number of frames that contributed.
fn ce_sum(logits: &[f64], n_classes: usize, labels: &[usize], mask: &[bool]) -> Result<(f64, Vec<f64>, usize)> {
    check_len("ce logits", logits.len(), labels.len() * n_classes)?;
    check_len("ce mask", mask.len(), labels.len())?;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let mut n = 0;
    for (f, (&label, &valid)) in labels.iter().zip(mask).enumerate() {
        if !valid {
            continue;
        }
        if label >= n_classes {
            return Err(Error::ClassOutOfRange { label, n_classes });
        }
        let row = &logits[f * n_classes..(f + 1) * n_classes];
        let lse = log_sum_exp(row);
        total += lse - row[label];
        for (j, v) in row.iter().enumerate() {
            grad[f * n_classes + j] = libm::exp(v - lse) - if j == label { 1.0 } else { 0.0 };
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask { what: "cross-entropy" });
    }
    Ok((total, grad, n))
}

/// Mean cross-entropy over unmasked frames via log-sum-exp, with gradient.
pub fn ce_loss_with_grad(logits: &[f64], n_classes: usize, labels: &[usize], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let (total, mut grad, n) = ce_sum(logits, n_classes, labels, mask)?;
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((total / n as f64, grad))
}

pub fn ce_loss(logits: &[f64], n_classes: usize, labels: &[usize], mask: &[bool]) -> Result<f64> {
    ce_loss_with_grad(logits, n_classes, labels, mask).map(|r| r.0)
}

/// The literal double sum over frames and classes (no batch mean).
pub fn ce_loss_sum(logits: &[f64], n_classes: usize, labels: &[usize], mask: &[bool]) -> Result<f64> {
    ce_sum(logits, n_classes, labels, mask).map(|r| r.0)
}

/// Per-unit weights of the action-unit loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuWeights(pub Vec<f64>);

impl AuWeights {
    pub fn uniform(units: usize) -> Self {
        Self(vec![1.0; units])
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

/// Inverse occurrence-rate weights normalized to mean 1.
///
/// `labels` and `mask` are `N×units` row-major; `r_i` is positives over valid
/// labels of unit `i`. `names` labels the units in errors.
pub fn au_weights(labels: &[bool], mask: &[bool], units: usize, names: &[&str]) -> Result<AuWeights> {
    if units == 0 || !labels.len().is_multiple_of(units) {
        return Err(Error::InvalidArgument(format!("{} labels do not split into {units} units", labels.len())));
    }
    check_len("au mask", mask.len(), labels.len())?;
    let mut pos = vec![0usize; units];
    let mut valid = vec![0usize; units];
    for (i, (&l, &m)) in labels.iter().zip(mask).enumerate() {
        if m {
            valid[i % units] += 1;
            if l {
                pos[i % units] += 1;
            }
        }
    }
    let missing: Vec<_> = (0..units)
        .filter(|&u| pos[u] == 0)
        .map(|u| names.get(u).map_or_else(|| format!("unit {u}"), |n| n.to_string()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::ZeroOccurrence { units: missing });
    }
    let inv: Vec<f64> = (0..units).map(|u| valid[u] as f64 / pos[u] as f64).collect();
    let mean = inv.iter().sum::<f64>() / units as f64;
    Ok(AuWeights(inv.iter().map(|w| w / mean).collect()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Weighted asymmetric action-unit loss on `N×units` logits:
///
/// `−(1/N) Σ_frames Σ_i w_i [p_i log p̂_i + (1 − p_i) p̂_i log(1 − p̂_i)]`
///
/// with `p̂ = clamp(sigmoid(logit), ε, 1−ε)`. The negative-label term is
/// scaled by the predicted probability itself. `N` counts frames with at
/// least one unmasked unit. With `modulated = false` the `p̂_i` factor is
/// dropped, giving weighted binary cross-entropy.
pub fn au_loss_with_grad(
    logits: &[f64],
    labels: &[f64],
    mask: &[bool],
    weights: &AuWeights,
    modulated: bool,
) -> Result<(f64, Vec<f64>)> {
    let units = weights.len();
    if units == 0 || !logits.len().is_multiple_of(units) {
        return Err(Error::InvalidArgument(format!("{} logits do not split into {units} units", logits.len())));
    }
    check_len("au labels", labels.len(), logits.len())?;
    check_len("au mask", mask.len(), logits.len())?;
    let w = weights.as_slice();
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let mut frames = 0usize;
    for f in 0..logits.len() / units {
        let mut any = false;
        for (u, &wu) in w.iter().enumerate() {
            let i = f * units + u;
            if !mask[i] {
                continue;
            }
            any = true;
            let raw = sigmoid(logits[i]);
            let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&raw);
            let q = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let p = labels[i];
            let log_q = libm::log(q);
            let log_1q = libm::log(1.0 - q);
            let neg_scale = if modulated { q } else { 1.0 };
            total += wu * (p * log_q + (1.0 - p) * neg_scale * log_1q);
            // d/dq of the bracketed term
            let dq = if modulated {
                p / q + (1.0 - p) * (log_1q - q / (1.0 - q))
            } else {
                p / q - (1.0 - p) / (1.0 - q)
            };
            if !clamped {
                grad[i] = -wu * dq * raw * (1.0 - raw);
            }
        }
        if any {
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::EmptyMask { what: "action-unit loss" });
    }
    let n = frames as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((-total / n, grad))
}

pub fn au_loss(logits: &[f64], labels: &[f64], mask: &[bool], weights: &AuWeights) -> Result<f64> {
    au_loss_with_grad(logits, labels, mask, weights, true).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[0.3, -0.2], &[0.3, -0.2], &all(2)).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 1.0], &all(2)).unwrap(), 0.5);
        let masked = mse(&[1.0, 9.0, 1.0], &[0.0, 0.0, 1.0], &[true, false, true]).unwrap();
        assert_eq!(masked, mse(&[1.0, 1.0], &[0.0, 1.0], &all(2)).unwrap());
        assert_eq!(mse(&[1.0], &[0.0], &[false]), Err(Error::EmptyMask { what: "mse" }));
    }

    #[test]
    fn ccc_cases() {
        let x = [-1.0, 0.0, 1.0];
        assert!((ccc(&x, &x, &all(3)).unwrap() - 1.0).abs() < 1e-15);
        assert!((ccc(&x, &[-0.5, 0.0, 0.5], &all(3)).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(ccc(&x, &[2.0, 2.0, 2.0], &all(3)).unwrap(), 0.0);
        assert_eq!(ccc(&[0.3; 3], &[0.3; 3], &all(3)).unwrap(), 1.0);
        assert_eq!(ccc(&[0.3; 3], &[0.5; 3], &all(3)).unwrap(), 0.0);
        assert!(ccc(&[1.0], &[1.0], &all(1)).is_err());
        let (l, _) = ccc_loss_with_grad(&x, &x, &all(3)).unwrap();
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn va_loss_limits() {
        let p = [0.1, -0.2, 0.5, 0.4, -0.7, 0.0];
        let l = [0.3, 0.2, 0.4, -0.1, -0.5, 0.6];
        let m = all(6);
        assert!(va_loss(&p, &p, &m, 0.5).unwrap().abs() < 1e-15);
        assert_eq!(va_loss(&p, &l, &m, 1.0).unwrap(), mse(&p, &l, &m).unwrap());
        let pure = (1.0 - ccc(&[0.1, 0.5, -0.7], &[0.3, 0.4, -0.5], &all(3)).unwrap()
            + 1.0
            - ccc(&[-0.2, 0.4, 0.0], &[0.2, -0.1, 0.6], &all(3)).unwrap())
            / 2.0;
        assert!((va_loss(&p, &l, &m, 0.0).unwrap() - pure).abs() < 1e-15);
        assert!(va_loss(&p, &l, &m, 1.5).is_err());
    }

    #[test]
    fn ce_uniform_logits() {
        let v = ce_loss(&[0.0; 16], 8, &[3, 7], &all(2)).unwrap();
        assert!((v - 2.079442).abs() < 1e-6);
        assert!((v - libm::log(8.0)).abs() < 1e-12);
    }

    #[test]
    fn ce_confident_true_class() {
        let mut logits = [0.0; 8];
        logits[2] = 60.0;
        assert!(ce_loss(&logits, 8, &[2], &all(1)).unwrap() < 1e-20);
    }

    #[test]
    fn ce_summed_form_matches_hand_expansion() {
        // frame 0 label 1, frame 1 label 0; -Σ_i Σ_j p_ij log p̂_ij keeps one
        // term per frame: -log softmax(row)[label]
        let logits = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let f0 = -libm::log(libm::exp(1.0) / (libm::exp(1.0) + 7.0));
        let f1 = -libm::log(libm::exp(2.0) / (libm::exp(2.0) + 7.0));
        let s = ce_loss_sum(&logits, 8, &[1, 0], &all(2)).unwrap();
        assert!((s - (f0 + f1)).abs() < 1e-12);
        let m = ce_loss(&logits, 8, &[1, 0], &all(2)).unwrap();
        assert!((m - s / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ce_rejects_out_of_range_class() {
        assert_eq!(
            ce_loss(&[0.0; 8], 8, &[8], &all(1)),
            Err(Error::ClassOutOfRange { label: 8, n_classes: 8 })
        );
        assert!(ce_loss(&[0.0; 8], 8, &[9], &[false]).is_err());
    }

    #[test]
    fn ce_shift_invariant() {
        let logits = [0.3, -1.0, 2.0, 0.5, 0.0, 0.1, -0.2, 1.1];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 5.0).collect();
        let a = ce_loss(&logits, 8, &[4], &all(1)).unwrap();
        let b = ce_loss(&shifted, 8, &[4], &all(1)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn au_unit_cases() {
        let w = AuWeights::uniform(1);
        assert!(au_loss(&[40.0], &[1.0], &all(1), &w).unwrap().abs() < 1e-6);
        assert!(au_loss(&[-40.0], &[0.0], &all(1), &w).unwrap().abs() < 1e-6);
        let half = au_loss(&[0.0], &[0.0], &all(1), &w).unwrap();
        assert!((half - 0.346574).abs() < 1e-6);
        assert!((half + 0.5 * libm::log(0.5)).abs() < 1e-15);
        assert!(au_loss(&[0.0], &[0.0], &[false], &w).is_err());
    }

    #[test]
    fn au_without_modulator_is_weighted_bce() {
        // two frames, two units, weights (0.5, 1.5)
        let w = AuWeights(vec![0.5, 1.5]);
        let logits = [0.4, -1.0, 2.0, 0.3];
        let labels = [1.0, 0.0, 0.0, 1.0];
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let hand = -(0.5 * s(0.4).ln() + 1.5 * (1.0 - s(-1.0)).ln() + 0.5 * (1.0 - s(2.0)).ln() + 1.5 * s(0.3).ln()) / 2.0;
        let (bce, _) = au_loss_with_grad(&logits, &labels, &all(4), &w, false).unwrap();
        assert!((bce - hand).abs() < 1e-12);
        let asym = au_loss(&logits, &labels, &all(4), &w).unwrap();
        assert!(asym < bce);
    }

    #[test]
    fn au_weight_cases() {
        let names = ["x", "y"];
        // rates 0.5 and 0.25
        let labels = [true, true, false, false, true, false, false, false];
        let w = au_weights(&labels, &all(8), 2, &names).unwrap();
        assert!((w.0[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.0[1] - 4.0 / 3.0).abs() < 1e-15);
        let doubled: Vec<bool> = labels.iter().chain(labels.iter()).copied().collect();
        assert_eq!(au_weights(&doubled, &all(16), 2, &names).unwrap(), w);
        let equal = au_weights(&[true, true, false, false], &all(4), 2, &names).unwrap();
        assert_eq!(equal.0, vec![1.0, 1.0]);
        match au_weights(&[true, false, false, false], &all(4), 2, &names) {
            Err(Error::ZeroOccurrence { units }) => assert_eq!(units, vec!["y".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
