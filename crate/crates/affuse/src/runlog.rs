//! Run logs as JSON lines: one `header` line, one `epoch` line per epoch and
//! a closing `summary` line, each tagged by a `kind` field. Every line is
//! flushed to disk as soon as it is produced.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use affuse_core::model::FusionModel;
use affuse_core::train::{EpochObserver, EpochRecord, RunHeader, RunLog, RunSummary, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header(RunHeader),
    Epoch(EpochRecord),
    Summary(RunSummary),
}

pub fn to_line(line: &LogLine) -> String {
    serde_json::to_string(line).expect("log records always serialize")
}

pub fn render(log: &RunLog) -> String {
    let mut out = to_line(&LogLine::Header(log.header.clone()));
    out.push('\n');
    for e in &log.epochs {
        out.push_str(&to_line(&LogLine::Epoch(e.clone())));
        out.push('\n');
    }
    if let Some(s) = &log.summary {
        out.push_str(&to_line(&LogLine::Summary(s.clone())));
        out.push('\n');
    }
    out
}

pub fn read(path: &Path) -> Result<RunLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut epochs = Vec::new();
    let mut summary = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        match parsed {
            LogLine::Header(h) if header.is_none() => header = Some(h),
            LogLine::Epoch(e) if header.is_some() => epochs.push(e),
            LogLine::Summary(s) if header.is_some() => summary = Some(s),
            _ => return Err(Error::parse(path, i + 1, "line out of order")),
        }
    }
    let header = header.ok_or_else(|| Error::format(path, "run log has no header line"))?;
    Ok(RunLog {
        header,
        epochs,
        summary,
    })
}

/// Appends log lines to a file and saves a checkpoint whenever the
/// validation selection score improves.
pub struct FileObserver {
    log: PathBuf,
    checkpoint: Option<PathBuf>,
    train: TrainConfig,
    wall_time: bool,
    started: Instant,
    echo: bool,
}

impl FileObserver {
    pub fn new(log: PathBuf, checkpoint: Option<PathBuf>, train: TrainConfig) -> Self {
        Self {
            log,
            checkpoint,
            train,
            wall_time: false,
            started: Instant::now(),
            echo: false,
        }
    }

    /// Records elapsed wall time per epoch; logs then differ between runs.
    pub fn with_wall_time(mut self, on: bool) -> Self {
        self.wall_time = on;
        self
    }

    /// Prints a progress line per epoch to stderr.
    pub fn with_echo(mut self, on: bool) -> Self {
        self.echo = on;
        self
    }

    fn append(&self, line: &LogLine) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.log)
            .map_err(|e| Error::io(&self.log, e))?;
        writeln!(f, "{}", to_line(line)).map_err(|e| Error::io(&self.log, e))?;
        f.sync_data().map_err(|e| Error::io(&self.log, e))
    }

    fn run<T>(r: Result<T>) -> affuse_core::Result<T> {
        r.map_err(|e| affuse_core::Error::Observer(e.to_string()))
    }
}

impl EpochObserver for FileObserver {
    fn on_start(&mut self, header: &RunHeader) -> affuse_core::Result<()> {
        self.started = Instant::now();
        Self::run(fs::write(&self.log, "").map_err(|e| Error::io(&self.log, e)))?;
        Self::run(self.append(&LogLine::Header(header.clone())))
    }

    fn on_epoch(&mut self, record: &mut EpochRecord, model: &FusionModel) -> affuse_core::Result<()> {
        if self.wall_time {
            record.wall_ms = Some(self.started.elapsed().as_millis() as u64);
        }
        if record.improved {
            if let Some(path) = &self.checkpoint {
                Self::run(checkpoint::save(path, model, &self.train))?;
            }
        }
        if self.echo {
            let eval = record
                .selection
                .map(|s| format!(" selection {}", crate::numfmt::fmt_f64(s)))
                .unwrap_or_default();
            eprintln!(
                "epoch {:>4}  loss {}{}{}",
                record.epoch,
                crate::numfmt::fmt_f64(record.train_loss),
                eval,
                if record.improved { "  *" } else { "" }
            );
        }
        Self::run(self.append(&LogLine::Epoch(record.clone())))
    }

    fn on_finish(&mut self, summary: &RunSummary) -> affuse_core::Result<()> {
        Self::run(self.append(&LogLine::Summary(summary.clone())))
    }
}
