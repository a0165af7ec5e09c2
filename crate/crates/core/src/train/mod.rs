//! Optimizer, training loop, evaluation and the feature-subset runner.

mod ablation;
mod adam;
mod config;
mod eval;
mod objective;
mod run;

pub use ablation::{ablation_run, AblationRow};
pub use adam::{AdamConfig, AdamState};
pub use config::TrainConfig;
pub use eval::{evaluate, predict_dataset, score_predictions, selection_score, FramePredictions};
pub use objective::{batch_loss, dataset_au_weights, BatchLoss, LossParts};
pub use run::{
    dataset_loss, train, verify_task_gradients, EpochObserver, EpochRecord, NoObserver, RunHeader, RunLog,
    RunSummary, TrainOutcome,
};
