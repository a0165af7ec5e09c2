use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{FeatureBank, LabelSet};
use crate::error::{Error, Result};
use crate::model::AU_UNITS;
use crate::tensor::Tensor;

/// `len` consecutive aligned frames; trailing slots past the end repeat the
/// last frame and are flagged as padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub frames: Vec<u64>,
    pub padded: Vec<bool>,
}

impl Window {
    pub fn start(&self) -> u64 {
        self.frames[0]
    }
}

/// Groups `frames` into windows of `len` starting every `stride` frames,
/// stopping once a window reaches the last frame.
pub fn plan_windows(frames: &[u64], len: usize, stride: usize) -> Result<Vec<Window>> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window length and stride must be positive (got {len}, {stride})"
        )));
    }
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let mut w = Window {
            frames: Vec::with_capacity(len),
            padded: Vec::with_capacity(len),
        };
        for i in start..start + len {
            let pad = i >= frames.len();
            w.frames.push(frames[i.min(frames.len() - 1)]);
            w.padded.push(pad);
        }
        out.push(w);
        if start + len >= frames.len() {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Tensors and masked labels for a group of windows.
///
/// Label arrays are flattened over `(window, position)`; masks are false for
/// padding slots and for invalid annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// One `[B, T, d]` tensor per stream, in dataset stream order.
    pub inputs: Vec<Tensor>,
    pub windows: usize,
    pub len: usize,
    pub frame_ids: Vec<u64>,
    pub real: Vec<bool>,
    pub va: Vec<f64>,
    pub va_mask: Vec<bool>,
    pub expr: Vec<usize>,
    pub expr_mask: Vec<bool>,
    pub au: Vec<f64>,
    pub au_mask: Vec<bool>,
}

impl Batch {
    pub fn n_slots(&self) -> usize {
        self.windows * self.len
    }

    pub fn starts(&self) -> impl Iterator<Item = u64> + '_ {
        self.frame_ids.iter().step_by(self.len).copied()
    }
}

/// A view of a bank and its labels restricted to the frames shared by a set
/// of streams.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    bank: &'a FeatureBank,
    labels: &'a LabelSet,
    streams: Vec<String>,
    frames: Vec<u64>,
}

impl<'a> Dataset<'a> {
    pub fn new(bank: &'a FeatureBank, labels: &'a LabelSet, streams: &[&str]) -> Result<Self> {
        if streams.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one stream".into()));
        }
        let frames = bank.aligned_frames(streams)?;
        if frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            bank,
            labels,
            streams: streams.iter().map(|s| String::from(*s)).collect(),
            frames,
        })
    }

    /// All streams of the bank, in manifest order.
    pub fn all_streams(bank: &'a FeatureBank, labels: &'a LabelSet) -> Result<Self> {
        let names: Vec<&str> = bank.streams().iter().map(|s| s.name.as_str()).collect();
        Self::new(bank, labels, &names)
    }

    pub fn bank(&self) -> &'a FeatureBank {
        self.bank
    }

    pub fn labels(&self) -> &'a LabelSet {
        self.labels
    }

    pub fn streams(&self) -> &[String] {
        &self.streams
    }

    pub fn frames(&self) -> &[u64] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Restricts the view to a subset of its frames (kept in ascending order).
    pub fn with_frames(&self, mut frames: Vec<u64>) -> Result<Self> {
        frames.sort_unstable();
        frames.dedup();
        if frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            frames,
            ..self.clone()
        })
    }

    /// Leading `1 − fraction` of the frames for training, the rest for validation.
    pub fn split(&self, val_fraction: f64) -> Result<(Self, Self)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction must lie in (0, 1), got {val_fraction}"
            )));
        }
        let n = self.frames.len();
        let n_val = ((n as f64 * val_fraction) as usize).max(1);
        if n_val >= n {
            return Err(Error::InvalidArgument(format!("{n} frames are too few to split")));
        }
        let (train, val) = self.frames.split_at(n - n_val);
        Ok((self.with_frames(train.to_vec())?, self.with_frames(val.to_vec())?))
    }

    pub fn windows(&self, len: usize, stride: usize) -> Result<Vec<Window>> {
        plan_windows(&self.frames, len, stride)
    }

    pub fn batch(&self, windows: &[&Window]) -> Result<Batch> {
        let b = windows.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let len = windows[0].frames.len();
        if windows.iter().any(|w| w.frames.len() != len) {
            return Err(Error::InvalidArgument("windows in a batch must share a length".into()));
        }
        let slots = b * len;
        let mut inputs = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let dim = self.bank.spec(s)?.dim;
            let mut data = Vec::with_capacity(slots * dim);
            for w in windows {
                for f in &w.frames {
                    let v = self
                        .bank
                        .vector(s, *f)
                        .ok_or_else(|| Error::InvalidArgument(format!("frame {f} missing from stream `{s}`")))?;
                    data.extend_from_slice(v);
                }
            }
            inputs.push(Tensor::new(&[b, len, dim], data)?);
        }
        let mut batch = Batch {
            inputs,
            windows: b,
            len,
            frame_ids: Vec::with_capacity(slots),
            real: Vec::with_capacity(slots),
            va: Vec::with_capacity(slots * 2),
            va_mask: Vec::with_capacity(slots * 2),
            expr: Vec::with_capacity(slots),
            expr_mask: Vec::with_capacity(slots),
            au: Vec::with_capacity(slots * AU_UNITS),
            au_mask: Vec::with_capacity(slots * AU_UNITS),
        };
        for w in windows {
            for (f, pad) in w.frames.iter().zip(&w.padded) {
                let real = !pad;
                let l = self.labels.get(*f);
                batch.frame_ids.push(*f);
                batch.real.push(real);
                for v in [l.valence, l.arousal] {
                    batch.va.push(v.unwrap_or(0.0));
                    batch.va_mask.push(real && v.is_some());
                }
                batch.expr.push(l.expr.map_or(0, usize::from));
                batch.expr_mask.push(real && l.expr.is_some());
                for u in l.au {
                    batch.au.push(if u == Some(true) { 1.0 } else { 0.0 });
                    batch.au_mask.push(real && u.is_some());
                }
            }
        }
        Ok(batch)
    }
}
