//! Feature banks, labels, windowing and synthetic data.

mod bank;
mod labels;
mod synth;
mod window;

pub use bank::FeatureBank;
pub use labels::{FrameLabels, LabelSet, Task, CLASS_SENTINEL, VA_SENTINEL};
pub use synth::{planted_labels, synth_generate, LabelPlant, PlantSpec, SynthStream};
pub use window::{plan_windows, Batch, Dataset, Window};
