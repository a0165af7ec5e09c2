use alloc::collections::BTreeMap;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AU_UNITS, EXPR_CLASSES};

/// Raw marker for a missing valence or arousal value.
pub const VA_SENTINEL: f64 = -5.0;
/// Raw marker for a missing expression class or action unit.
pub const CLASS_SENTINEL: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Va,
    Expr,
    Au,
    All,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
            Task::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "va" => Some(Task::Va),
            "expr" => Some(Task::Expr),
            "au" => Some(Task::Au),
            "all" => Some(Task::All),
            _ => None,
        }
    }

    pub fn includes(self, other: Task) -> bool {
        self == Task::All || self == other
    }
}

/// Labels of one frame; `None` marks an invalid annotation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameLabels {
    pub valence: Option<f64>,
    pub arousal: Option<f64>,
    pub expr: Option<u8>,
    pub au: [Option<bool>; AU_UNITS],
}

impl FrameLabels {
    pub fn is_empty(&self) -> bool {
        self.valence.is_none() && self.arousal.is_none() && self.expr.is_none() && self.au.iter().all(Option::is_none)
    }
}

/// Labels keyed by frame id. Frames without an entry carry no valid label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    frames: BTreeMap<u64, FrameLabels>,
}

fn va_value(frame: u64, what: &str, v: f64) -> Result<Option<f64>> {
    if v == VA_SENTINEL {
        Ok(None)
    } else if (-1.0..=1.0).contains(&v) {
        Ok(Some(v))
    } else {
        Err(Error::InvalidArgument(format!(
            "frame {frame}: {what} {v} outside [-1, 1] and not the sentinel {VA_SENTINEL}"
        )))
    }
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame: u64) -> FrameLabels {
        self.frames.get(&frame).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &FrameLabels)> {
        self.frames.iter()
    }

    pub fn set(&mut self, frame: u64, labels: FrameLabels) {
        self.frames.insert(frame, labels);
    }

    /// Records a raw valence/arousal pair; the sentinel `-5` marks a value invalid.
    pub fn record_va(&mut self, frame: u64, valence: f64, arousal: f64) -> Result<()> {
        let v = va_value(frame, "valence", valence)?;
        let a = va_value(frame, "arousal", arousal)?;
        let e = self.frames.entry(frame).or_default();
        e.valence = v;
        e.arousal = a;
        Ok(())
    }

    /// Records a raw expression class; `-1` marks the frame invalid.
    pub fn record_expr(&mut self, frame: u64, class: i64) -> Result<()> {
        let value = if class == CLASS_SENTINEL {
            None
        } else if (0..EXPR_CLASSES as i64).contains(&class) {
            Some(class as u8)
        } else {
            return Err(Error::ClassOutOfRange {
                label: class.max(0) as usize,
                n_classes: EXPR_CLASSES,
            });
        };
        self.frames.entry(frame).or_default().expr = value;
        Ok(())
    }

    /// Records the twelve raw AU flags; `-1` masks a single unit.
    pub fn record_au(&mut self, frame: u64, units: &[i64]) -> Result<()> {
        if units.len() != AU_UNITS {
            return Err(Error::InvalidArgument(format!(
                "frame {frame}: expected {AU_UNITS} action units, got {}",
                units.len()
            )));
        }
        let mut out = [None; AU_UNITS];
        for (slot, &u) in out.iter_mut().zip(units) {
            *slot = match u {
                CLASS_SENTINEL => None,
                0 => Some(false),
                1 => Some(true),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "frame {frame}: action unit value {other} is not 0, 1 or -1"
                    )))
                }
            };
        }
        self.frames.entry(frame).or_default().au = out;
        Ok(())
    }
}
