use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{train, NoObserver};
use crate::data::{Dataset, FeatureBank, LabelSet, Task};
use crate::error::Result;
use crate::model::{FusionModel, ModelConfig};
use crate::objectives::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub streams: Vec<String>,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        self.streams.join("+")
    }
}

fn train_task(
    bank: &FeatureBank,
    labels: &LabelSet,
    streams: &[&str],
    base: &ModelConfig,
    cfg: &TrainConfig,
    task: Task,
) -> Result<EvalReport> {
    let data = Dataset::new(bank, labels, streams)?;
    let (tr, val) = data.split(cfg.val_fraction)?;
    let mut model_cfg = base.clone();
    model_cfg.streams = streams.iter().map(|s| bank.spec(s).cloned()).collect::<Result<_>>()?;
    let model = FusionModel::new(model_cfg)?;
    let cfg = TrainConfig {
        task,
        checkpoint: None,
        ..cfg.clone()
    };
    Ok(train(model, &tr, &val, &cfg, &mut NoObserver)?.summary().best)
}

/// Trains one model per subset with shared hyperparameters and returns the
/// rows sorted by descending challenge score (stable for ties).
///
/// With `task = all` each subset trains the three heads jointly. Otherwise
/// every subset runs three single-task trainings and the row combines the VA
/// columns of the VA run, the expression F1 of the expression run and the AU
/// F1 of the AU run.
pub fn ablation_run(
    bank: &FeatureBank,
    labels: &LabelSet,
    subsets: &[Vec<String>],
    base: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    for subset in subsets {
        for s in subset {
            bank.spec(s)?;
        }
    }
    let mut rows = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let names: Vec<&str> = subset.iter().map(String::as_str).collect();
        let report = if cfg.task == Task::All {
            train_task(bank, labels, &names, base, cfg, Task::All)?
        } else {
            let va = train_task(bank, labels, &names, base, cfg, Task::Va)?;
            let expr = train_task(bank, labels, &names, base, cfg, Task::Expr)?;
            let au = train_task(bank, labels, &names, base, cfg, Task::Au)?;
            EvalReport::new(va.ccc_v, va.ccc_a, expr.f1_expr, au.f1_au)
        };
        rows.push(AblationRow {
            streams: subset.clone(),
            report,
        });
    }
    rows.sort_by(|a, b| b.report.score.total_cmp(&a.report.score));
    Ok(rows)
}
