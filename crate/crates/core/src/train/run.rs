use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::config::TrainConfig;
use super::eval::{evaluate, selection_score};
use super::objective::{batch_loss, dataset_au_weights};
use crate::data::{Dataset, Task, Window};
use crate::error::{Error, Result};
use crate::gradcheck::suite::{run_check, Check};
use crate::gradcheck::GradcheckConfig;
use crate::graph::{Graph, Var};
use crate::model::{FusionModel, Mode, ModelConfig, AU_UNITS};
use crate::objectives::{AuWeights, EvalReport};

const RNG_SHUFFLE: u64 = 1;
const RNG_DROPOUT: u64 = 2;

/// Written once before the first epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub train_frames: usize,
    pub val_frames: usize,
    /// Frame-weighted loss of the initial model over the training data, without dropout.
    pub initial_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seed: u64,
    /// Frame-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub steps: usize,
    pub eval: Option<EvalReport>,
    /// The score best-checkpoint selection compares.
    pub selection: Option<f64>,
    pub improved: bool,
    /// Filled in by observers that measure time; absent by default so logs stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_epoch: usize,
    pub best: EvalReport,
    pub best_selection: f64,
    pub final_train_loss: f64,
    pub min_train_loss: f64,
    /// Whether the training loss fell by at least `min_loss_drop` relative to the initial loss.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub epochs: Vec<EpochRecord>,
    pub summary: Option<RunSummary>,
}

/// Hooks called as training progresses, e.g. to persist logs and checkpoints.
pub trait EpochObserver {
    fn on_start(&mut self, _header: &RunHeader) -> Result<()> {
        Ok(())
    }

    /// `model` holds the weights after the epoch; `record.improved` marks a new best.
    fn on_epoch(&mut self, _record: &mut EpochRecord, _model: &FusionModel) -> Result<()> {
        Ok(())
    }

    fn on_finish(&mut self, _summary: &RunSummary) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl EpochObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation selection score.
    pub best: FusionModel,
    pub last: FusionModel,
    pub log: RunLog,
}

impl TrainOutcome {
    pub fn summary(&self) -> &RunSummary {
        self.log.summary.as_ref().expect("set when training completes")
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn check_streams(model: &FusionModel, data: &Dataset<'_>) -> Result<()> {
    let cfg = model.config();
    let names: Vec<&str> = cfg.streams.iter().map(|s| s.name.as_str()).collect();
    let have: Vec<&str> = data.streams().iter().map(String::as_str).collect();
    if names != have {
        return Err(Error::InvalidArgument(format!(
            "model streams {names:?} do not match dataset streams {have:?}"
        )));
    }
    for s in &cfg.streams {
        let actual = data.bank().spec(&s.name)?.dim;
        if actual != s.dim {
            return Err(Error::StreamDimension {
                stream: s.name.clone(),
                expected: s.dim,
                actual,
            });
        }
    }
    Ok(())
}

/// Runs the end-to-end gradient checks of the task on a small model.
pub fn verify_task_gradients(task: Task, seed: u64) -> Result<()> {
    let checks: &[Check] = match task {
        Task::Va => &[Check::ModelVa],
        Task::Expr => &[Check::ModelExpr],
        Task::Au => &[Check::ModelAu],
        Task::All => &[Check::ModelVa, Check::ModelExpr, Check::ModelAu],
    };
    let cfg = GradcheckConfig::default();
    for c in checks {
        let rep = run_check(*c, seed, &cfg)?;
        if !rep.passed() {
            return Err(Error::GradcheckGuard(format!(
                "{} failed with relative error {:.3e}",
                c.name(),
                rep.max_rel_error()
            )));
        }
    }
    Ok(())
}

struct Step<'a> {
    task: Task,
    lambda: f64,
    weights: &'a AuWeights,
}

struct Recorded {
    graph: Graph,
    params: Vec<Var>,
    loss: Var,
    value: f64,
    frames: usize,
}

fn diverged(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, step },
        other => other,
    }
}

/// Forward pass and loss of one batch; `dropout` switches to training mode.
fn record_batch(
    model: &FusionModel,
    data: &Dataset<'_>,
    windows: &[&Window],
    step: &Step<'_>,
    dropout: Option<&mut ChaCha8Rng>,
    at: (usize, usize),
) -> Result<Option<Recorded>> {
    let batch = data.batch(windows)?;
    let mut g = Graph::new();
    let p = match dropout {
        Some(_) => model.params().bind(&mut g),
        None => model.params().bind_frozen(&mut g),
    };
    let xs: Vec<Var> = batch.inputs.iter().map(|x| g.constant(x.clone())).collect();
    let mut mode = match dropout {
        Some(rng) => Mode::Train { rng },
        None => Mode::Eval,
    };
    let out = model.forward(&mut g, &p, &xs, &mut mode).map_err(diverged(at.0, at.1))?;
    let Some(loss) =
        batch_loss(&mut g, &out, &batch, step.task, step.lambda, step.weights).map_err(diverged(at.0, at.1))?
    else {
        return Ok(None);
    };
    let value = g.value(loss.loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Diverged { epoch: at.0, step: at.1 });
    }
    Ok(Some(Recorded {
        graph: g,
        params: p,
        loss: loss.loss,
        value,
        frames: loss.frames,
    }))
}

fn weighted_mean(total: f64, frames: usize) -> Result<f64> {
    if frames == 0 {
        return Err(Error::EmptyMask { what: "training labels for the task" });
    }
    Ok(total / frames as f64)
}

fn eval_loss(model: &FusionModel, data: &Dataset<'_>, windows: &[&Window], batch_size: usize, step: &Step<'_>) -> Result<f64> {
    let (mut total, mut frames) = (0.0, 0);
    for (i, chunk) in windows.chunks(batch_size).enumerate() {
        if let Some(r) = record_batch(model, data, chunk, step, None, (0, i))? {
            total += r.value * r.frames as f64;
            frames += r.frames;
        }
    }
    weighted_mean(total, frames)
}

struct Optimizer {
    state: AdamState,
    adam: AdamConfig,
    batch_size: usize,
    dropout: ChaCha8Rng,
}

/// One optimizer pass over `windows`; returns the frame-weighted loss and step count.
fn train_epoch(
    model: &mut FusionModel,
    data: &Dataset<'_>,
    windows: &[&Window],
    step: &Step<'_>,
    opt: &mut Optimizer,
    epoch: usize,
) -> Result<(f64, usize)> {
    let (mut total, mut frames, mut steps) = (0.0, 0, 0);
    for (i, chunk) in windows.chunks(opt.batch_size).enumerate() {
        let Some(mut r) = record_batch(model, data, chunk, step, Some(&mut opt.dropout), (epoch, i))? else {
            continue;
        };
        total += r.value * r.frames as f64;
        frames += r.frames;
        r.graph.backward(r.loss).map_err(diverged(epoch, i))?;
        let params = model.params_mut();
        params.zero_grads();
        params.accumulate_grads(&r.graph, &r.params)?;
        opt.state.step(params, &opt.adam)?;
        steps += 1;
    }
    Ok((weighted_mean(total, frames)?, steps))
}

/// Trains `model` on `train_data`, selecting the best epoch on `val_data`.
///
/// Windows are reshuffled every epoch from `cfg.seed`; the same seed,
/// configuration and data always give the same log and weights. The
/// validation set is evaluated every `eval_every` epochs and after the last
/// one. Ties in the selection score keep the earlier epoch.
pub fn train(
    mut model: FusionModel,
    train_data: &Dataset<'_>,
    val_data: &Dataset<'_>,
    cfg: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_streams(&model, train_data)?;
    check_streams(&model, val_data)?;
    if cfg.verify_gradients {
        verify_task_gradients(cfg.task, cfg.seed)?;
    }
    let weights = if cfg.task.includes(Task::Au) {
        dataset_au_weights(train_data)?
    } else {
        AuWeights::uniform(AU_UNITS)
    };
    let t = model.config().window;
    let windows = train_data.windows(t, cfg.stride.unwrap_or(t))?;
    let step = Step {
        task: cfg.task,
        lambda: cfg.lambda,
        weights: &weights,
    };

    let ordered: Vec<&Window> = windows.iter().collect();
    let initial_loss = eval_loss(&model, train_data, &ordered, cfg.batch_size, &step)?;
    let header = RunHeader {
        seed: cfg.seed,
        train: cfg.clone(),
        model: model.config().clone(),
        train_frames: train_data.len(),
        val_frames: val_data.len(),
        initial_loss,
    };
    observer.on_start(&header)?;
    let mut log = RunLog {
        header,
        epochs: Vec::with_capacity(cfg.epochs),
        summary: None,
    };

    let mut opt = Optimizer {
        state: AdamState::new(model.params()),
        adam: cfg.adam(),
        batch_size: cfg.batch_size,
        dropout: rng(cfg.seed, RNG_DROPOUT),
    };
    let mut shuffle = rng(cfg.seed, RNG_SHUFFLE);
    let mut best: Option<(usize, f64, EvalReport, FusionModel)> = None;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let picked: Vec<&Window> = order.iter().map(|&i| &windows[i]).collect();
        let (train_loss, steps) = train_epoch(&mut model, train_data, &picked, &step, &mut opt, epoch)?;
        let mut record = EpochRecord {
            epoch,
            seed: cfg.seed,
            train_loss,
            steps,
            eval: None,
            selection: None,
            improved: false,
            wall_ms: None,
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let report = evaluate(&model, val_data, cfg.batch_size, cfg.au_threshold)?;
            let sel = selection_score(&report, cfg.task);
            record.eval = Some(report);
            record.selection = Some(sel);
            if best.as_ref().is_none_or(|b| sel > b.1) {
                record.improved = true;
                best = Some((epoch, sel, report, model.clone()));
            }
        }
        observer.on_epoch(&mut record, &model)?;
        log.epochs.push(record);
    }

    let (best_epoch, best_selection, best_report, mut best_model) = best.expect("the last epoch is always evaluated");
    best_model.params_mut().clear_grads();
    model.params_mut().clear_grads();
    let final_train_loss = log.epochs.last().map_or(initial_loss, |e| e.train_loss);
    let min_train_loss = log.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    let summary = RunSummary {
        best_epoch,
        best: best_report,
        best_selection,
        final_train_loss,
        min_train_loss,
        converged: min_train_loss <= (1.0 - cfg.min_loss_drop) * initial_loss,
    };
    observer.on_finish(&summary)?;
    log.summary = Some(summary);
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        log,
    })
}

/// Frame-weighted task loss of `model` over a dataset, without dropout.
pub fn dataset_loss(model: &FusionModel, data: &Dataset<'_>, cfg: &TrainConfig, weights: &AuWeights) -> Result<f64> {
    let t = model.config().window;
    let windows = data.windows(t, t)?;
    let refs: Vec<&Window> = windows.iter().collect();
    let step = Step {
        task: cfg.task,
        lambda: cfg.lambda,
        weights,
    };
    eval_loss(model, data, &refs, cfg.batch_size, &step)
}
