//! Synthetic feature banks with planted, recoverable labels.
//!
//! Each frame draws a latent `z ~ U[-1, 1]^k`. Labels are fixed functions of
//! `z`: valence and arousal are L1-normalized linear forms (so they stay in
//! `[-1, 1]`), the expression is the argmax of eight unit-norm linear scores,
//! and each action unit thresholds a linear score at the quantile that gives
//! it a target occurrence rate. A signal stream emits `P·z + σ·ε`; a
//! distractor stream emits the same kind of map applied to an independent
//! latent, so it has structure but no label information.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBank, FrameLabels, LabelSet};
use crate::error::{Error, Result};
use crate::model::{StreamSpec, AU_UNITS, EXPR_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub name: String,
    pub dim: usize,
    /// Whether the stream is a noisy linear image of the label latent.
    pub signal: bool,
}

impl SynthStream {
    pub fn new(name: impl Into<String>, dim: usize, signal: bool) -> Self {
        Self {
            name: name.into(),
            dim,
            signal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub streams: Vec<SynthStream>,
    pub latent_dim: usize,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    /// Fraction of frames whose labels are all replaced by sentinels.
    pub invalid_fraction: f64,
    /// Permute label records across frames (a negative control).
    pub shuffle_labels: bool,
    /// Range the per-unit AU occurrence rates are drawn from.
    pub au_rate: (f64, f64),
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            streams: Vec::new(),
            latent_dim: 8,
            noise: 0.1,
            invalid_fraction: 0.0,
            shuffle_labels: false,
            au_rate: (0.2, 0.6),
        }
    }
}

// independent ChaCha streams so that labels do not depend on the stream list
const RNG_PLANT: u64 = 0;
const RNG_LATENT: u64 = 1;
const RNG_INVALID: u64 = 2;
const RNG_SHUFFLE: u64 = 3;
const RNG_FEATURES: u64 = 16;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The label functions of a plant, exposed so tests can reason about them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPlant {
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
    pub expr: Vec<Vec<f64>>,
    pub au: Vec<Vec<f64>>,
    pub au_rates: Vec<f64>,
}

impl LabelPlant {
    fn draw(seed: u64, spec: &PlantSpec) -> Self {
        let k = spec.latent_dim;
        let mut r = rng(seed, RNG_PLANT);
        let l1 = |r: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..k).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let n: f64 = v.iter().map(|x| x.abs()).sum();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let valence = l1(&mut r);
        let arousal = l1(&mut r);
        let expr = gaussian_matrix(&mut r, EXPR_CLASSES, k)
            .into_iter()
            .map(|row| {
                let n = libm::sqrt(dot(&row, &row));
                row.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let au = gaussian_matrix(&mut r, AU_UNITS, k);
        let (lo, hi) = spec.au_rate;
        let au_rates = (0..AU_UNITS).map(|_| r.random_range(lo..=hi)).collect();
        Self {
            valence,
            arousal,
            expr,
            au,
            au_rates,
        }
    }
}

/// Draws a bank and labels. Identical `(seed, n_frames, spec)` give identical output.
pub fn synth_generate(seed: u64, n_frames: usize, spec: &PlantSpec) -> Result<(FeatureBank, LabelSet)> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("synthetic data needs at least one frame".into()));
    }
    if spec.streams.is_empty() || spec.latent_dim == 0 {
        return Err(Error::InvalidArgument("synthetic data needs streams and a latent dimension".into()));
    }
    if spec.noise.is_nan() || spec.noise < 0.0 || !(0.0..1.0).contains(&spec.invalid_fraction) {
        return Err(Error::InvalidArgument("noise must be >= 0 and invalid_fraction in [0, 1)".into()));
    }
    let (lo, hi) = spec.au_rate;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidArgument("au_rate must satisfy 0 < lo <= hi < 1".into()));
    }
    let k = spec.latent_dim;
    let plant = LabelPlant::draw(seed, spec);

    let mut lr = rng(seed, RNG_LATENT);
    let latent: Vec<Vec<f64>> = (0..n_frames)
        .map(|_| (0..k).map(|_| lr.random_range(-1.0..=1.0)).collect())
        .collect();

    // AU thresholds at the empirical quantile of each unit's score
    let thresholds: Vec<f64> = plant
        .au
        .iter()
        .zip(&plant.au_rates)
        .map(|(row, rate)| {
            let mut scores: Vec<f64> = latent.iter().map(|z| dot(row, z)).collect();
            scores.sort_by(f64::total_cmp);
            let idx = (((1.0 - rate) * n_frames as f64) as usize).min(n_frames - 1);
            scores[idx]
        })
        .collect();

    let mut records: Vec<FrameLabels> = latent
        .iter()
        .map(|z| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (c, row) in plant.expr.iter().enumerate() {
                let s = dot(row, z);
                if s > best_score {
                    best = c;
                    best_score = s;
                }
            }
            let mut au = [None; AU_UNITS];
            for (u, slot) in au.iter_mut().enumerate() {
                *slot = Some(dot(&plant.au[u], z) >= thresholds[u]);
            }
            FrameLabels {
                valence: Some(dot(&plant.valence, z).clamp(-1.0, 1.0)),
                arousal: Some(dot(&plant.arousal, z).clamp(-1.0, 1.0)),
                expr: Some(best as u8),
                au,
            }
        })
        .collect();

    if spec.shuffle_labels {
        records.shuffle(&mut rng(seed, RNG_SHUFFLE));
    }
    if spec.invalid_fraction > 0.0 {
        let mut ir = rng(seed, RNG_INVALID);
        for rec in records.iter_mut() {
            if ir.random::<f64>() < spec.invalid_fraction {
                *rec = FrameLabels::default();
            }
        }
    }
    let mut labels = LabelSet::new();
    for (f, rec) in records.into_iter().enumerate() {
        labels.set(f as u64, rec);
    }

    let mut bank = FeatureBank::new();
    for (si, s) in spec.streams.iter().enumerate() {
        bank.add_stream(StreamSpec::new(s.name.clone(), s.dim))?;
        let mut fr = rng(seed, RNG_FEATURES + si as u64);
        let scale = 1.0 / libm::sqrt(k as f64);
        let proj: Vec<Vec<f64>> = gaussian_matrix(&mut fr, s.dim, k)
            .into_iter()
            .map(|row| row.into_iter().map(|x| x * scale).collect())
            .collect();
        let mut z_other = vec![0.0; k];
        for (f, z) in latent.iter().enumerate() {
            let source: &[f64] = if s.signal {
                z
            } else {
                z_other.iter_mut().for_each(|v| *v = fr.random_range(-1.0..=1.0));
                &z_other
            };
            let v = proj
                .iter()
                .map(|row| dot(row, source) + spec.noise * fr.sample::<f64, _>(StandardNormal))
                .collect();
            bank.insert(&s.name, f as u64, v)?;
        }
    }
    Ok((bank, labels))
}

/// The label functions a given seed plants.
pub fn planted_labels(seed: u64, spec: &PlantSpec) -> LabelPlant {
    LabelPlant::draw(seed, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec() -> PlantSpec {
        PlantSpec {
            streams: vec![SynthStream::new("a", 12, true), SynthStream::new("b", 5, false)],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_generate(7, 50, &spec()).unwrap(), synth_generate(7, 50, &spec()).unwrap());
        assert_ne!(synth_generate(7, 50, &spec()).unwrap(), synth_generate(8, 50, &spec()).unwrap());
    }

    #[test]
    fn labels_independent_of_stream_list() {
        let (_, l1) = synth_generate(3, 40, &spec()).unwrap();
        let mut s = spec();
        s.streams.truncate(1);
        let (_, l2) = synth_generate(3, 40, &s).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn shapes_and_ranges() {
        let (bank, labels) = synth_generate(1, 200, &spec()).unwrap();
        assert_eq!(bank.frame_counts(), vec![("a".into(), 200), ("b".into(), 200)]);
        assert_eq!(labels.len(), 200);
        for (_, l) in labels.iter() {
            assert!((-1.0..=1.0).contains(&l.valence.unwrap()));
            assert!(l.expr.unwrap() < 8);
        }
    }

    #[test]
    fn au_rates_near_targets() {
        let s = spec();
        let (_, labels) = synth_generate(5, 1000, &s).unwrap();
        let plant = planted_labels(5, &s);
        for u in 0..AU_UNITS {
            let pos = labels.iter().filter(|(_, l)| l.au[u] == Some(true)).count();
            assert!((pos as f64 / 1000.0 - plant.au_rates[u]).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_fraction_and_shuffle() {
        let mut s = spec();
        s.invalid_fraction = 0.1;
        let (_, labels) = synth_generate(2, 1000, &s).unwrap();
        let empty = labels.iter().filter(|(_, l)| l.is_empty()).count();
        assert!((60..140).contains(&empty), "{empty}");

        let (_, clean) = synth_generate(2, 100, &spec()).unwrap();
        let mut s = spec();
        s.shuffle_labels = true;
        let (_, shuffled) = synth_generate(2, 100, &s).unwrap();
        assert_ne!(clean, shuffled);
        let mut a: Vec<u8> = clean.iter().map(|(_, l)| l.expr.unwrap()).collect();
        let mut b: Vec<u8> = shuffled.iter().map(|(_, l)| l.expr.unwrap()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_zero_frames() {
        assert!(synth_generate(1, 0, &spec()).is_err());
    }
}
