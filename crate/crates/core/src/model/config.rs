use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame outputs of the valence/arousal head.
pub const VA_OUTPUTS: usize = 2;
/// Six basic expressions, neutral, and "other".
pub const EXPR_CLASSES: usize = 8;
/// AU1, AU2, AU4, AU6, AU7, AU10, AU12, AU15, AU23, AU24, AU25, AU26.
pub const AU_UNITS: usize = 12;

pub const AU_NAMES: [&str; AU_UNITS] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
];

/// Widths of the pretrained extractor outputs the pipeline was designed around.
pub const KNOWN_STREAM_DIMS: [(&str, usize); 5] = [
    ("fau", 17),
    ("resnet18", 512),
    ("poster", 768),
    ("poster2", 768),
    ("eac", 2048),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub name: String,
    pub dim: usize,
}

impl StreamSpec {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    /// Looks up the default width of a known extractor stream.
    pub fn known(name: &str) -> Option<Self> {
        KNOWN_STREAM_DIMS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, d)| Self::new(n.to_string(), *d))
    }
}

/// Architecture of a [`FusionModel`](super::FusionModel).
///
/// The stream count `n` is `streams.len()`; `window` is the sequence length
/// `T` the encoder sees (1 for static frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub streams: Vec<StreamSpec>,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub window: usize,
    /// Rows of the positional table; windows longer than this are rejected.
    pub max_len: usize,
    /// Adds the positional table after the affine maps. Disabling it is a test hook.
    pub positional: bool,
    pub layernorm_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            streams: Vec::new(),
            d_model: 256,
            n_heads: 4,
            n_layers: 4,
            d_ff: 1024,
            dropout: 0.1,
            window: 1,
            max_len: 512,
            positional: true,
            layernorm_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn stream_index(&self, name: &str) -> Result<usize> {
        self.streams
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownStream(name.into()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.streams.is_empty() {
            return bad("model needs at least one feature stream".into());
        }
        for (i, s) in self.streams.iter().enumerate() {
            if s.dim == 0 {
                return bad(format!("stream `{}` has zero dimension", s.name));
            }
            if self.streams[..i].iter().any(|o| o.name == s.name) {
                return bad(format!("stream `{}` listed twice", s.name));
            }
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.window > self.max_len {
            return Err(Error::SequenceTooLong {
                len: self.window,
                max: self.max_len,
            });
        }
        if self.layernorm_eps.is_nan() || self.layernorm_eps <= 0.0 {
            return bad("layernorm_eps must be positive".into());
        }
        Ok(())
    }
}
