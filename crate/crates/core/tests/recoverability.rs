//! Least-squares probes show the planted labels are linearly recoverable
//! from the signal stream before any network is trained on them.

use affuse_core::data::{synth_generate, LabelSet, PlantSpec, SynthStream};
use affuse_core::data::FeatureBank;
use affuse_core::objectives::{ccc, macro_f1};
use nalgebra::{DMatrix, DVector};

fn spec(noise: f64) -> PlantSpec {
    PlantSpec {
        streams: vec![SynthStream::new("a", 24, true), SynthStream::new("b", 16, false)],
        noise,
        ..Default::default()
    }
}

fn design(bank: &FeatureBank, stream: &str, frames: &[u64]) -> DMatrix<f64> {
    let d = bank.spec(stream).unwrap().dim;
    DMatrix::from_fn(frames.len(), d + 1, |r, c| {
        if c == d {
            1.0
        } else {
            bank.vector(stream, frames[r]).unwrap()[c]
        }
    })
}

fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-12).unwrap()
}

fn valence_probe(bank: &FeatureBank, labels: &LabelSet, stream: &str) -> f64 {
    let frames: Vec<u64> = (0..2000).collect();
    let (train, test) = frames.split_at(1600);
    let y = |fs: &[u64]| DVector::from_iterator(fs.len(), fs.iter().map(|f| labels.get(*f).valence.unwrap()));
    let w = fit(&design(bank, stream, train), &y(train));
    let pred = design(bank, stream, test) * w;
    let mask = vec![true; test.len()];
    ccc(pred.as_slice(), y(test).as_slice(), &mask).unwrap()
}

#[test]
fn noiseless_valence_is_exactly_linear() {
    let (bank, labels) = synth_generate(9, 2000, &spec(0.0)).unwrap();
    assert!(valence_probe(&bank, &labels, "a") > 0.99);
}

#[test]
fn noisy_valence_still_recoverable_but_distractor_is_not() {
    let (bank, labels) = synth_generate(9, 2000, &spec(0.1)).unwrap();
    assert!(valence_probe(&bank, &labels, "a") > 0.9);
    assert!(valence_probe(&bank, &labels, "b").abs() < 0.2);
}

#[test]
fn expression_argmax_of_linear_scores_is_recoverable() {
    let (bank, labels) = synth_generate(4, 2000, &spec(0.1)).unwrap();
    let frames: Vec<u64> = (0..2000).collect();
    let (train, test) = frames.split_at(1600);
    let x = design(&bank, "a", train);
    let weights: Vec<DVector<f64>> = (0..8)
        .map(|c| {
            let y = DVector::from_iterator(
                train.len(),
                train.iter().map(|f| if labels.get(*f).expr == Some(c) { 1.0 } else { 0.0 }),
            );
            fit(&x, &y)
        })
        .collect();
    let xt = design(&bank, "a", test);
    // one-vs-rest least squares is a weak classifier; chance is 0.125
    let pred: Vec<usize> = (0..test.len())
        .map(|r| {
            let row = xt.row(r);
            (0..8)
                .max_by(|a, b| row.dot(&weights[*a].transpose()).total_cmp(&row.dot(&weights[*b].transpose())))
                .unwrap()
        })
        .collect();
    let truth: Vec<usize> = test.iter().map(|f| labels.get(*f).expr.unwrap() as usize).collect();
    let f1 = macro_f1(&pred, &truth, 8, &vec![true; test.len()]).unwrap();
    assert!(f1 > 0.6, "{f1}");
}
