use alloc::vec::Vec;

use crate::data::{Batch, Dataset, Task};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{Outputs, AU_NAMES, AU_UNITS, EXPR_CLASSES};
use crate::objectives::{au_loss_with_grad, au_weights, ce_loss_with_grad, va_loss_with_grad, AuWeights};

/// Per-component loss values of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub va: Option<f64>,
    pub expr: Option<f64>,
    pub au: Option<f64>,
}

impl LossParts {
    pub fn total(&self) -> Option<f64> {
        let parts: Vec<f64> = [self.va, self.expr, self.au].into_iter().flatten().collect();
        if parts.is_empty() {
            None
        } else {
            Some(parts.iter().sum())
        }
    }
}

/// The scalar training objective of a batch.
pub struct BatchLoss {
    pub loss: Var,
    pub parts: LossParts,
    /// Real slots with at least one valid label for the task.
    pub frames: usize,
}

fn column_count(mask: &[bool], cols: usize, c: usize) -> usize {
    mask.iter().skip(c).step_by(cols).filter(|m| **m).count()
}

/// Records the task loss of `out` on `g`; `None` when no slot carries a
/// usable label for the task.
///
/// In `all` mode the three losses are summed with unit weights. A VA term
/// needs at least two valid values per dimension; otherwise it is left out.
pub fn batch_loss(
    g: &mut Graph,
    out: &Outputs,
    batch: &Batch,
    task: Task,
    lambda: f64,
    weights: &AuWeights,
) -> Result<Option<BatchLoss>> {
    let mut terms = Vec::new();
    let mut parts = LossParts::default();
    let slots = batch.n_slots();
    let mut labelled = alloc::vec![false; slots];

    if task.includes(Task::Va) && column_count(&batch.va_mask, 2, 0) >= 2 && column_count(&batch.va_mask, 2, 1) >= 2 {
        let (value, grad) = va_loss_with_grad(g.value(out.va).data(), &batch.va, &batch.va_mask, lambda)?;
        terms.push(g.scalar_fn(out.va, value, grad)?);
        parts.va = Some(value);
        for (s, l) in labelled.iter_mut().enumerate() {
            *l |= batch.va_mask[2 * s] || batch.va_mask[2 * s + 1];
        }
    }
    if task.includes(Task::Expr) && batch.expr_mask.iter().any(|m| *m) {
        let (value, grad) = ce_loss_with_grad(g.value(out.expr).data(), EXPR_CLASSES, &batch.expr, &batch.expr_mask)?;
        terms.push(g.scalar_fn(out.expr, value, grad)?);
        parts.expr = Some(value);
        for (s, l) in labelled.iter_mut().enumerate() {
            *l |= batch.expr_mask[s];
        }
    }
    if task.includes(Task::Au) && batch.au_mask.iter().any(|m| *m) {
        let (value, grad) = au_loss_with_grad(g.value(out.au).data(), &batch.au, &batch.au_mask, weights, true)?;
        terms.push(g.scalar_fn(out.au, value, grad)?);
        parts.au = Some(value);
        for (s, l) in labelled.iter_mut().enumerate() {
            *l |= batch.au_mask[s * AU_UNITS..(s + 1) * AU_UNITS].iter().any(|m| *m);
        }
    }
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(None);
    };
    let mut loss = first;
    for t in rest {
        loss = g.add(loss, *t)?;
    }
    Ok(Some(BatchLoss {
        loss,
        parts,
        frames: labelled.iter().filter(|l| **l).count(),
    }))
}

/// AU class-balance weights from the valid labels of a dataset's frames.
pub fn dataset_au_weights(data: &Dataset<'_>) -> Result<AuWeights> {
    let mut labels = Vec::with_capacity(data.len() * AU_UNITS);
    let mut mask = Vec::with_capacity(data.len() * AU_UNITS);
    for f in data.frames() {
        for u in data.labels().get(*f).au {
            labels.push(u == Some(true));
            mask.push(u.is_some());
        }
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyMask { what: "action-unit labels" });
    }
    au_weights(&labels, &mask, AU_UNITS, &AU_NAMES)
}
