//! Data manifests.
//!
//! ```toml
//! [[stream]]
//! name = "fau"
//! dim = 17
//! path = "fau.csv"
//! format = "text"      # or "binary"
//!
//! [labels]
//! va = "va.csv"
//! expr = "expr.csv"
//! au = "au.csv"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use affuse_core::data::{FeatureBank, LabelSet, Task};
use affuse_core::model::StreamSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{features, label_files};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamEntry {
    pub name: String,
    pub dim: usize,
    pub path: PathBuf,
    #[serde(default)]
    pub format: FeatureFormat,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub va: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub au: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "stream", default)]
    pub streams: Vec<StreamEntry>,
    #[serde(default)]
    pub labels: LabelPaths,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base: PathBuf,
}

/// 1-based line of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|b| **b == b'\n').count() + 1
}

pub(crate) fn toml_error(path: &Path, text: &str, err: &toml::de::Error) -> Error {
    let line = err.span().map_or(0, |s| line_of(text, s.start));
    Error::parse(path, line, err.message().to_string())
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = toml::from_str(&text).map_err(|e| toml_error(path, &text, &e))?;
        if manifest.streams.is_empty() {
            return Err(Error::parse(path, 1, "manifest lists no streams"));
        }
        for (i, s) in manifest.streams.iter().enumerate() {
            if s.dim == 0 {
                return Err(Error::format(path, format!("stream `{}` has dimension 0", s.name)));
            }
            if manifest.streams[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::format(path, format!("stream `{}` listed twice", s.name)));
            }
        }
        manifest.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Failed(format!("serializing manifest: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn stream_names(&self) -> Vec<&str> {
        self.streams.iter().map(|s| s.name.as_str()).collect()
    }

    /// Loads the listed streams, or every stream when `only` is `None`.
    pub fn load_bank(&self, only: Option<&[String]>) -> Result<FeatureBank> {
        let mut bank = FeatureBank::new();
        let chosen: Vec<&StreamEntry> = match only {
            None => self.streams.iter().collect(),
            Some(names) => names
                .iter()
                .map(|n| {
                    self.streams
                        .iter()
                        .find(|s| &s.name == n)
                        .ok_or_else(|| affuse_core::Error::UnknownStream(n.clone()).into())
                })
                .collect::<Result<_>>()?,
        };
        for s in chosen {
            bank.add_stream(StreamSpec::new(s.name.clone(), s.dim))?;
            let path = self.resolve(&s.path);
            match s.format {
                FeatureFormat::Text => features::read_text(&path, &s.name, &mut bank)?,
                FeatureFormat::Binary => features::read_binary(&path, &s.name, &mut bank)?,
            }
        }
        Ok(bank)
    }

    /// Loads every label file the manifest lists.
    pub fn load_labels(&self) -> Result<LabelSet> {
        let mut labels = LabelSet::new();
        for task in [Task::Va, Task::Expr, Task::Au] {
            if let Some(p) = self.label_path(task) {
                load_labels(&self.resolve(p), task, &mut labels)?;
            }
        }
        Ok(labels)
    }

    pub fn label_path(&self, task: Task) -> Option<&Path> {
        match task {
            Task::Va => self.labels.va.as_deref(),
            Task::Expr => self.labels.expr.as_deref(),
            Task::Au => self.labels.au.as_deref(),
            Task::All => None,
        }
    }
}

/// Reads one label file into `labels`.
pub fn load_labels(path: &Path, task: Task, labels: &mut LabelSet) -> Result<()> {
    match task {
        Task::Va => label_files::read_va(path, labels),
        Task::Expr => label_files::read_expr(path, labels),
        Task::Au => label_files::read_au(path, labels),
        Task::All => Err(Error::Config("label files hold a single task".into())),
    }
}

/// Writes a bank and labels beside `manifest_path` and the manifest itself.
pub fn write_dataset(
    manifest_path: &Path,
    bank: &FeatureBank,
    labels: &LabelSet,
    format: FeatureFormat,
) -> Result<Manifest> {
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ext = match format {
        FeatureFormat::Text => "csv",
        FeatureFormat::Binary => "bin",
    };
    let mut streams = Vec::new();
    for spec in bank.streams() {
        let file = PathBuf::from(format!("{}.{ext}", spec.name));
        let path = dir.join(&file);
        match format {
            FeatureFormat::Text => features::write_text(&path, &spec.name, bank)?,
            FeatureFormat::Binary => features::write_binary(&path, &spec.name, bank)?,
        }
        streams.push(StreamEntry {
            name: spec.name.clone(),
            dim: spec.dim,
            path: file,
            format,
        });
    }
    let label_paths = LabelPaths {
        va: Some("va.csv".into()),
        expr: Some("expr.csv".into()),
        au: Some("au.csv".into()),
    };
    label_files::write_va(&dir.join("va.csv"), labels)?;
    label_files::write_expr(&dir.join("expr.csv"), labels)?;
    label_files::write_au(&dir.join("au.csv"), labels)?;
    let manifest = Manifest {
        streams,
        labels: label_paths,
        base: dir,
    };
    manifest.save(manifest_path)?;
    Ok(manifest)
}

/// Every file [`write_dataset`] creates for the given stream names.
pub fn dataset_files(manifest_path: &Path, streams: &[&str], format: FeatureFormat) -> Vec<PathBuf> {
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ext = match format {
        FeatureFormat::Text => "csv",
        FeatureFormat::Binary => "bin",
    };
    let mut out = vec![manifest_path.to_path_buf()];
    out.extend(streams.iter().map(|s| dir.join(format!("{s}.{ext}"))));
    out.extend(["va.csv", "expr.csv", "au.csv"].iter().map(|f| dir.join(f)));
    out
}
