//! Affine stream alignment, transformer fusion and task heads.

mod config;
mod fusion;
mod params;
mod positional;

pub use config::{ModelConfig, StreamSpec, AU_NAMES, AU_UNITS, EXPR_CLASSES, KNOWN_STREAM_DIMS, VA_OUTPUTS};
pub use fusion::{FusionModel, Mode, Outputs, Predictions};
pub use params::{Param, ParamId, ParamSet};
pub use positional::PositionalTable;
