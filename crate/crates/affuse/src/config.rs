//! Run configuration files.
//!
//! ```toml
//! [data]
//! manifest = "data/manifest.toml"
//! streams = ["fau", "resnet18"]   # default: every stream in the manifest
//!
//! [model]
//! d_model = 64
//!
//! [train]
//! task = "va"
//! epochs = 30
//!
//! [output]
//! dir = "run"
//! ```
//!
//! Overrides of the form `train.lr=1e-3` are applied after the file is read.
//! Values are parsed as TOML and fall back to a bare string, so both
//! `train.task=expr` and `data.streams=["a","b"]` work.

use std::fs;
use std::path::{Path, PathBuf};

use affuse_core::model::ModelConfig;
use affuse_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::manifest::toml_error;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub streams: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Adds elapsed milliseconds to each epoch line of the run log.
    pub wall_time: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
            wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: OutputSection,
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `dotted.key=value` override to `table`.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in path {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{key}`: `{p}` is not a table"))),
        };
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunSpec {
    /// Reads `file` (if any), then applies `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<Table>(&text).map_err(|e| toml_error(path, &text, &e))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let spec: RunSpec = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if !spec.model.streams.is_empty() {
            return Err(Error::Config(
                "streams come from the manifest; select them with data.streams".into(),
            ));
        }
        spec.train.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration always serializes")
    }
}
