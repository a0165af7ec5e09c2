use alloc::vec::Vec;

use crate::data::{Dataset, LabelSet, Task, Window};
use crate::error::{Error, Result};
use crate::model::{FusionModel, AU_UNITS, EXPR_CLASSES, VA_OUTPUTS};
use crate::objectives::{au_macro_f1, ccc, macro_f1, EvalReport};

/// Raw head outputs for every frame of a dataset, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePredictions {
    pub frames: Vec<u64>,
    /// `N×2` valence/arousal.
    pub va: Vec<f64>,
    /// `N×8` expression logits.
    pub expr: Vec<f64>,
    /// `N×12` action-unit logits.
    pub au: Vec<f64>,
}

impl FramePredictions {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn expr_class(&self, i: usize) -> usize {
        let row = &self.expr[i * EXPR_CLASSES..(i + 1) * EXPR_CLASSES];
        let mut best = 0;
        for (c, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = c;
            }
        }
        best
    }

    pub fn au_probability(&self, i: usize, unit: usize) -> f64 {
        let x = self.au[i * AU_UNITS + unit];
        1.0 / (1.0 + libm::exp(-x))
    }
}

/// Runs inference over non-overlapping windows and keeps the real slots.
pub fn predict_dataset(model: &FusionModel, data: &Dataset<'_>, batch_size: usize) -> Result<FramePredictions> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let t = model.config().window;
    let windows = data.windows(t, t)?;
    let mut out = FramePredictions {
        frames: Vec::with_capacity(data.len()),
        va: Vec::with_capacity(data.len() * VA_OUTPUTS),
        expr: Vec::with_capacity(data.len() * EXPR_CLASSES),
        au: Vec::with_capacity(data.len() * AU_UNITS),
    };
    for chunk in windows.chunks(batch_size) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let batch = data.batch(&refs)?;
        let pred = model.predict(&batch.inputs)?;
        for s in 0..batch.n_slots() {
            if !batch.real[s] {
                continue;
            }
            out.frames.push(batch.frame_ids[s]);
            out.va.extend_from_slice(&pred.va.data()[s * VA_OUTPUTS..(s + 1) * VA_OUTPUTS]);
            out.expr.extend_from_slice(&pred.expr.data()[s * EXPR_CLASSES..(s + 1) * EXPR_CLASSES]);
            out.au.extend_from_slice(&pred.au.data()[s * AU_UNITS..(s + 1) * AU_UNITS]);
        }
    }
    Ok(out)
}

/// Metrics of predictions against labels; an action unit is predicted
/// present when its probability is at least `au_threshold`.
pub fn score_predictions(pred: &FramePredictions, labels: &LabelSet, au_threshold: f64) -> Result<EvalReport> {
    let n = pred.len();
    let mut v = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut a = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut e = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut u = (
        Vec::with_capacity(n * AU_UNITS),
        Vec::with_capacity(n * AU_UNITS),
        Vec::with_capacity(n * AU_UNITS),
    );
    for (i, f) in pred.frames.iter().enumerate() {
        let l = labels.get(*f);
        v.0.push(pred.va[2 * i]);
        v.1.push(l.valence.unwrap_or(0.0));
        v.2.push(l.valence.is_some());
        a.0.push(pred.va[2 * i + 1]);
        a.1.push(l.arousal.unwrap_or(0.0));
        a.2.push(l.arousal.is_some());
        e.0.push(pred.expr_class(i));
        e.1.push(l.expr.map_or(0, usize::from));
        e.2.push(l.expr.is_some());
        for (k, unit) in l.au.iter().enumerate() {
            u.0.push(pred.au_probability(i, k) >= au_threshold);
            u.1.push(*unit == Some(true));
            u.2.push(unit.is_some());
        }
    }
    Ok(EvalReport::new(
        ccc(&v.0, &v.1, &v.2)?,
        ccc(&a.0, &a.1, &a.2)?,
        macro_f1(&e.0, &e.1, EXPR_CLASSES, &e.2)?,
        au_macro_f1(&u.0, &u.1, &u.2, AU_UNITS)?,
    ))
}

pub fn evaluate(model: &FusionModel, data: &Dataset<'_>, batch_size: usize, au_threshold: f64) -> Result<EvalReport> {
    score_predictions(&predict_dataset(model, data, batch_size)?, data.labels(), au_threshold)
}

/// The part of the challenge score a task is trained for; `all` uses the full score.
pub fn selection_score(report: &EvalReport, task: Task) -> f64 {
    match task {
        Task::Va => report.va_mean(),
        Task::Expr => report.f1_expr,
        Task::Au => report.f1_au,
        Task::All => report.score,
    }
}
