//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use affuse_core::data::{synth_generate, Dataset, FeatureBank, LabelSet, PlantSpec, SynthStream, Task};
use affuse_core::gradcheck::suite::{run_suite, Check};
use affuse_core::gradcheck::GradcheckConfig;
use affuse_core::model::{FusionModel, ModelConfig, StreamSpec};
use affuse_core::objectives::EvalReport;
use affuse_core::train::{ablation_run, evaluate, train};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::config::RunSpec;
use crate::error::{Error, Result};
use crate::manifest::{dataset_files, write_dataset, FeatureFormat, Manifest};
use crate::numfmt::fmt_f64;
use crate::report;
use crate::runlog::FileObserver;

#[derive(Debug, Parser)]
#[command(name = "affuse", version, about = "Multi-stream feature fusion for affect recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted labels.
    Synth(SynthArgs),
    /// Train a fusion model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Combine four metrics into the challenge score.
    #[command(allow_negative_numbers = true)]
    Score(ScoreArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Train one model per feature subset and rank them.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Kv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Text,
    Binary,
}

impl From<FileFormat> for FeatureFormat {
    fn from(f: FileFormat) -> Self {
        match f {
            FileFormat::Text => FeatureFormat::Text,
            FileFormat::Binary => FeatureFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Va,
    Expr,
    Au,
    All,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Va => Task::Va,
            TaskArg::Expr => Task::Expr,
            TaskArg::Au => Task::Au,
            TaskArg::All => Task::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// The validation frames recorded in the checkpoint's training config.
    Val,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives manifest.toml, one feature file per stream and three label files.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Comma-separated `name:dim`; a bare known extractor name uses its standard width.
    #[arg(long, default_value = "fau:17,resnet18:512")]
    pub streams: String,
    /// Streams that carry the planted signal (default: all).
    #[arg(long, value_delimiter = ',')]
    pub signal: Option<Vec<String>>,
    #[arg(long, default_value_t = 8)]
    pub latent: usize,
    /// Standard deviation of the feature noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Fraction of frames whose labels are all invalid.
    #[arg(long, default_value_t = 0.0)]
    pub invalid_fraction: f64,
    /// Permute labels across frames (negative control).
    #[arg(long)]
    pub shuffle_labels: bool,
    #[arg(long, value_enum, default_value_t = FileFormat::Text)]
    pub format: FileFormat,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

/// Options shared by `train` and `ablate`; each flag becomes an override applied before `--set`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Frames per window (1 for static frames).
    #[arg(long)]
    pub window: Option<usize>,
    /// Output directory for the checkpoint, run log, report and effective config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `dotted.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Do not print the effective configuration and per-epoch progress.
    #[arg(long)]
    pub quiet: bool,
}

impl RunArgs {
    fn spec(&self) -> Result<RunSpec> {
        let mut o = Vec::new();
        let quote = |p: &Path| format!("{:?}", p.display().to_string());
        if let Some(m) = &self.manifest {
            o.push(format!("data.manifest={}", quote(m)));
        }
        if let Some(t) = self.task {
            o.push(format!("train.task=\"{}\"", Task::from(t).name()));
        }
        if let Some(v) = self.epochs {
            o.push(format!("train.epochs={v}"));
        }
        if let Some(v) = self.lr {
            o.push(format!("train.lr={v:e}"));
        }
        if let Some(v) = self.seed {
            o.push(format!("train.seed={v}"));
        }
        if let Some(v) = self.batch_size {
            o.push(format!("train.batch_size={v}"));
        }
        if let Some(v) = self.window {
            o.push(format!("model.window={v}"));
        }
        if let Some(d) = &self.out {
            o.push(format!("output.dir={}", quote(d)));
        }
        o.extend(self.overrides.iter().cloned());
        RunSpec::resolve(self.config.as_deref(), &o)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    /// Also write the report as key=value lines to this path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub valence: f64,
    pub arousal: f64,
    pub fer: f64,
    pub au: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeds 0..N per check.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Restrict to these checks (repeatable); `--op list` prints the names.
    #[arg(long)]
    pub op: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Semicolon-separated subsets of comma-separated streams, e.g. `a;b;a,b`.
    /// Default: each stream alone, then all together.
    #[arg(long)]
    pub subsets: Option<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Score(a) => {
            let r = EvalReport::new(a.valence, a.arousal, a.fer, a.au);
            println!("{}", fmt_f64(r.score));
            Ok(0)
        }
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
    }
}

fn parse_streams(raw: &str) -> Result<Vec<StreamSpec>> {
    let mut out: Vec<StreamSpec> = Vec::new();
    for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = match item.split_once(':') {
            Some((name, dim)) => {
                let dim: usize = dim
                    .parse()
                    .ok()
                    .filter(|d| *d > 0)
                    .ok_or_else(|| Error::Config(format!("stream `{item}`: dimension must be a positive integer")))?;
                StreamSpec::new(name, dim)
            }
            None => StreamSpec::known(item)
                .ok_or_else(|| Error::Config(format!("stream `{item}` needs an explicit `:dim`")))?,
        };
        if out.iter().any(|s| s.name == spec.name) {
            return Err(Error::Config(format!("stream `{}` listed twice", spec.name)));
        }
        out.push(spec);
    }
    if out.is_empty() {
        return Err(Error::Config("no streams given".into()));
    }
    Ok(out)
}

fn synth(a: &SynthArgs) -> Result<i32> {
    let specs = parse_streams(&a.streams)?;
    if let Some(sig) = &a.signal {
        if let Some(bad) = sig.iter().find(|s| !specs.iter().any(|p| &p.name == *s)) {
            return Err(Error::Config(format!("signal stream `{bad}` is not among --streams")));
        }
    }
    let plant = PlantSpec {
        streams: specs
            .iter()
            .map(|s| {
                let signal = a.signal.as_ref().is_none_or(|sig| sig.contains(&s.name));
                SynthStream::new(s.name.clone(), s.dim, signal)
            })
            .collect(),
        latent_dim: a.latent,
        noise: a.noise,
        invalid_fraction: a.invalid_fraction,
        shuffle_labels: a.shuffle_labels,
        ..PlantSpec::default()
    };
    let manifest_path = a.out.join("manifest.toml");
    let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let files = dataset_files(&manifest_path, &names, a.format.into());
    if !a.force {
        if let Some(existing) = files.iter().find(|f| f.exists()) {
            return Err(Error::Exists(existing.clone()));
        }
    }
    let (bank, labels) =
        synth_generate(a.seed, a.frames as usize, &plant).map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_dataset(&manifest_path, &bank, &labels, a.format.into())?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(0)
}

struct LoadedData {
    bank: FeatureBank,
    labels: LabelSet,
    names: Vec<String>,
}

fn load_data(spec: &RunSpec) -> Result<LoadedData> {
    let path = spec
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("no manifest given (--manifest or data.manifest)".into()))?;
    let manifest = Manifest::load(path)?;
    let bank = manifest.load_bank(spec.data.streams.as_deref())?;
    let labels = manifest.load_labels()?;
    let names = bank.streams().iter().map(|s| s.name.clone()).collect();
    Ok(LoadedData { bank, labels, names })
}

fn model_config(spec: &RunSpec, bank: &FeatureBank) -> ModelConfig {
    ModelConfig {
        streams: bank.streams().to_vec(),
        ..spec.model.clone()
    }
}

fn echo_spec(spec: &RunSpec, names: &[String]) -> RunSpec {
    let mut effective = spec.clone();
    effective.data.streams = Some(names.to_vec());
    effective
}

fn train_cmd(a: &TrainArgs) -> Result<i32> {
    let spec = a.run.spec()?;
    let data = load_data(&spec)?;
    let effective = echo_spec(&spec, &data.names);
    let out = &spec.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, effective.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    if !a.run.quiet {
        println!("# effective configuration");
        print!("{}", effective.to_toml());
        println!();
    }

    let names: Vec<&str> = data.names.iter().map(String::as_str).collect();
    let full = Dataset::new(&data.bank, &data.labels, &names)?;
    let (tr, val) = full.split(spec.train.val_fraction)?;
    let model = FusionModel::new(model_config(&spec, &data.bank))?;
    let ckpt = spec
        .train
        .checkpoint
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("best.ckpt"));
    let mut observer = FileObserver::new(out.join("runlog.jsonl"), Some(ckpt.clone()), spec.train.clone())
        .with_wall_time(spec.output.wall_time)
        .with_echo(!a.run.quiet);
    let outcome = train(model, &tr, &val, &spec.train, &mut observer)?;
    let summary = outcome.summary();
    report::write_kv(&out.join("report.kv"), &summary.best)?;
    println!("best epoch {} (checkpoint {})", summary.best_epoch, ckpt.display());
    print!("{}", report::render_table(&summary.best));
    if summary.converged {
        Ok(0)
    } else {
        eprintln!(
            "error: training did not converge: lowest training loss {} vs initial {} (required drop {})",
            fmt_f64(summary.min_train_loss),
            fmt_f64(outcome.log.header.initial_loss),
            fmt_f64(spec.train.min_loss_drop)
        );
        Ok(1)
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<i32> {
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let cfg = ckpt.model.config();
    let names: Vec<String> = cfg.streams.iter().map(|s| s.name.clone()).collect();
    let bank = manifest.load_bank(Some(&names))?;
    for s in &cfg.streams {
        let actual = bank.spec(&s.name)?.dim;
        if actual != s.dim {
            return Err(affuse_core::Error::StreamDimension {
                stream: s.name.clone(),
                expected: s.dim,
                actual,
            }
            .into());
        }
    }
    let labels = manifest.load_labels()?;
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let full = Dataset::new(&bank, &labels, &refs)?;
    let data = match a.split {
        SplitArg::All => full,
        SplitArg::Train => full.split(ckpt.train.val_fraction)?.0,
        SplitArg::Val => full.split(ckpt.train.val_fraction)?.1,
    };
    let r = evaluate(&ckpt.model, &data, ckpt.train.batch_size, ckpt.train.au_threshold)?;
    match a.format {
        OutputFormat::Table => print!("{}", report::render_table(&r)),
        OutputFormat::Kv => print!("{}", report::render_kv(&r)),
    }
    if let Some(p) = &a.report {
        report::write_kv(p, &r)?;
    }
    Ok(0)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<i32> {
    if a.op.iter().any(|o| o == "list") {
        for c in Check::ALL {
            println!("{}", c.name());
        }
        return Ok(0);
    }
    let checks: Vec<Check> = if a.op.is_empty() {
        Check::ALL.to_vec()
    } else {
        a.op.iter()
            .map(|o| Check::parse(o).ok_or_else(|| Error::Config(format!("unknown check `{o}` (try --op list)"))))
            .collect::<Result<_>>()?
    };
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let cfg = GradcheckConfig {
        step: a.step,
        tol: a.tol,
        ..GradcheckConfig::default()
    };
    let mut failed = 0;
    for check in checks {
        let outcomes = run_suite(&[check], 0..a.seeds, &cfg)?;
        let worst = outcomes.iter().map(|o| o.report.max_rel_error()).fold(0.0, f64::max);
        let bad: Vec<u64> = outcomes.iter().filter(|o| !o.report.passed()).map(|o| o.seed).collect();
        let status = if bad.is_empty() { "PASS" } else { "FAIL" };
        print!("{status} {:<16} seeds {:>4}  max rel error {}", check.name(), a.seeds, fmt_f64(worst));
        if !bad.is_empty() {
            failed += 1;
            print!("  failing seeds {}", bad.len());
        }
        println!();
    }
    if failed > 0 {
        eprintln!("error: {failed} check(s) exceeded tolerance {}", fmt_f64(a.tol));
        Ok(1)
    } else {
        Ok(0)
    }
}

fn parse_subsets(raw: Option<&str>, available: &[String]) -> Result<Vec<Vec<String>>> {
    let subsets: Vec<Vec<String>> = match raw {
        Some(raw) => raw
            .split(';')
            .map(|s| s.split(',').map(|n| n.trim().to_string()).filter(|n| !n.is_empty()).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect(),
        None => {
            let mut v: Vec<Vec<String>> = available.iter().map(|s| vec![s.clone()]).collect();
            if available.len() > 1 {
                v.push(available.to_vec());
            }
            v
        }
    };
    if subsets.is_empty() {
        return Err(Error::Config("no feature subsets given".into()));
    }
    Ok(subsets)
}

fn ablate_cmd(a: &AblateArgs) -> Result<i32> {
    let spec = a.run.spec()?;
    let data = load_data(&spec)?;
    let subsets = parse_subsets(a.subsets.as_deref(), &data.names)?;
    if !a.run.quiet {
        println!("# effective configuration");
        print!("{}", echo_spec(&spec, &data.names).to_toml());
        println!();
    }
    let rows = ablation_run(&data.bank, &data.labels, &subsets, &spec.model, &spec.train)?;
    match a.format {
        OutputFormat::Table => print!("{}", report::render_ablation(&rows)),
        OutputFormat::Kv => print!("{}", report::render_ablation_kv(&rows)),
    }
    Ok(0)
}
