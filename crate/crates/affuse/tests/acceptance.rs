//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use affuse::checkpoint;
use affuse::report::render_kv;
use affuse::runlog::FileObserver;
use affuse_core::data::{synth_generate, Dataset, FeatureBank, LabelSet, PlantSpec, SynthStream, Task};
use affuse_core::gradcheck::suite::{run_suite, Check};
use affuse_core::gradcheck::GradcheckConfig;
use affuse_core::model::{FusionModel, Mode, ModelConfig, EXPR_CLASSES};
use affuse_core::objectives::{au_loss, ccc, ce_loss, mse, AuWeights, EvalReport};
use affuse_core::train::{
    ablation_run, batch_loss, dataset_au_weights, evaluate, predict_dataset, score_predictions, train, NoObserver,
    TrainConfig,
};
use affuse_core::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, Duration, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let mut v = f();
    let elapsed = start.elapsed();
    if elapsed > budget {
        v.passed = false;
        v.detail.push_str(&format!("; over the {budget:?} budget"));
    }
    v.detail.push_str(&format!(" [{:.2}s]", elapsed.as_secs_f64()));
    v
}

// Features, Valence, Arousal, FER, AU, printed score
const RESULTS_TABLE: [(&str, f64, f64, f64, f64, f64); 8] = [
    ("EAC", 0.414, 0.425, 0.249, 0.433, 1.1015),
    ("POSTER", 0.439, 0.347, 0.247, 0.423, 1.063),
    ("ResNet18", 0.420, 0.451, 0.266, 0.454, 1.1555),
    ("POSTER2", 0.483, 0.374, 0.253, 0.441, 1.1775),
    ("ResNet18+FAU", 0.443, 0.393, 0.281, 0.468, 1.167),
    ("ResNet18+POSTER2", 0.462, 0.412, 0.315, 0.452, 1.204),
    ("POSTER2+POSTER+EAC", 0.453, 0.398, 0.243, 0.446, 1.1145),
    ("ResNet18+POSTER2+FAU", 0.503, 0.432, 0.319, 0.493, 1.2795),
];

fn table_arithmetic() -> Verdict {
    let mut off = Vec::new();
    for (name, v, a, fer, au, printed) in RESULTS_TABLE {
        let score = EvalReport::new(v, a, fer, au).score;
        if (score - printed).abs() > 5e-4 {
            off.push(format!("{name}: computed {score:.4}, printed {printed}"));
        }
    }
    let ok = RESULTS_TABLE.len() - off.len();
    let mut detail = format!("{ok}/{} rows within 5e-4", RESULTS_TABLE.len());
    if !off.is_empty() {
        detail.push_str(&format!(" ({})", off.join("; ")));
    }
    verdict(off.is_empty(), detail)
}

fn gradient_suite() -> Verdict {
    let seeds = 100;
    let cfg = GradcheckConfig::default();
    let outcomes = match run_suite(&Check::ALL, 0..seeds, &cfg) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("suite aborted: {e}")),
    };
    let worst = outcomes.iter().map(|o| o.report.max_rel_error()).fold(0.0, f64::max);
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.report.passed())
        .map(|o| format!("{}@{}", o.check.name(), o.seed))
        .collect();
    verdict(
        failed.is_empty(),
        format!(
            "{} checks x {seeds} seeds, worst relative error {worst:.2e} (tol {:.0e}){}",
            Check::ALL.len(),
            cfg.tol,
            if failed.is_empty() { String::new() } else { format!(", failures: {}", failed.join(" ")) }
        ),
    )
}

fn loss_identities() -> Verdict {
    let p = [0.3, -0.7, 0.1, 0.9];
    let all = [true; 4];
    let mut notes = Vec::new();
    let mut ok = true;
    let mut expect = |what: &str, got: f64, want: f64, tol: f64| {
        let good = (got - want).abs() <= tol;
        ok &= good;
        notes.push(format!("{what}={got:.9}{}", if good { "" } else { " (FAIL)" }));
    };
    expect("mse(p,p)", mse(&p, &p, &all).unwrap(), 0.0, 0.0);
    expect("ccc(x,x)", ccc(&p, &p, &all).unwrap(), 1.0, 1e-12);
    let uniform = ce_loss(&[0.0; EXPR_CLASSES], EXPR_CLASSES, &[3], &[true]).unwrap();
    expect("ce(uniform)", uniform, 8f64.ln(), 1e-9);
    let one = AuWeights(vec![1.0]);
    expect("au(p=1,q->1)", au_loss(&[40.0], &[1.0], &[true], &one).unwrap(), 0.0, 1e-6);
    expect("au(p=0,q->0)", au_loss(&[-40.0], &[0.0], &[true], &one).unwrap(), 0.0, 1e-6);
    expect("au(p=0,q=0.5)", au_loss(&[0.0], &[0.0], &[true], &one).unwrap(), 0.346574, 1e-6);
    verdict(ok, notes.join(", "))
}

fn plant(shuffle: bool) -> PlantSpec {
    PlantSpec {
        streams: vec![SynthStream::new("a", 128, true), SynthStream::new("b", 32, false)],
        latent_dim: 6,
        noise: 0.1,
        shuffle_labels: shuffle,
        ..PlantSpec::default()
    }
}

fn learn_model(bank: &FeatureBank) -> FusionModel {
    FusionModel::new(ModelConfig {
        streams: bank.streams().to_vec(),
        d_model: 32,
        n_heads: 4,
        n_layers: 2,
        d_ff: 64,
        dropout: 0.1,
        window: 1,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn learn_config(task: Task) -> TrainConfig {
    TrainConfig {
        task,
        lr: 2e-3,
        batch_size: 32,
        epochs: 50,
        seed: 1,
        val_fraction: 0.2,
        verify_gradients: false,
        ..TrainConfig::default()
    }
}

fn task_metric(r: &EvalReport, task: Task) -> f64 {
    match task {
        Task::Va => r.ccc_v,
        Task::Expr => r.f1_expr,
        _ => r.f1_au,
    }
}

/// Mean metric of fixed predictions scored against permuted validation labels.
fn permutation_chance(
    model: &FusionModel,
    val: &Dataset<'_>,
    labels: &LabelSet,
    task: Task,
    rounds: u64,
) -> affuse_core::Result<f64> {
    let pred = predict_dataset(model, val, 256)?;
    let frames = val.frames().to_vec();
    let mut total = 0.0;
    for round in 0..rounds {
        let mut order = frames.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(1000 + round));
        let mut permuted = LabelSet::new();
        for (f, src) in frames.iter().zip(&order) {
            permuted.set(*f, labels.get(*src));
        }
        total += task_metric(&score_predictions(&pred, &permuted, 0.5)?, task);
    }
    Ok(total / rounds as f64)
}

fn learnability() -> Verdict {
    let run = || -> affuse_core::Result<Verdict> {
        let thresholds = [(Task::Va, 0.8, "CCC_V"), (Task::Expr, 0.9, "F1_expr"), (Task::Au, 0.85, "F1_AU")];
        let (bank, labels) = synth_generate(7, 2000, &plant(false))?;
        let data = Dataset::all_streams(&bank, &labels)?;
        let (tr, val) = data.split(0.2)?;
        let mut ok = true;
        let mut notes = Vec::new();
        for (task, min, name) in thresholds {
            let out = train(learn_model(&bank), &tr, &val, &learn_config(task), &mut NoObserver)?;
            let m = task_metric(&out.summary().best, task);
            ok &= m > min;
            notes.push(format!("{name} {m:.3} (> {min})"));
        }

        let (sbank, slabels) = synth_generate(7, 2000, &plant(true))?;
        let sdata = Dataset::all_streams(&sbank, &slabels)?;
        // the control is scored on frames that took no part in epoch selection
        let (fit, test) = sdata.split(0.2)?;
        let (str_, sval) = fit.split(0.25)?;
        for (task, _, name) in thresholds {
            let out = train(learn_model(&sbank), &str_, &sval, &learn_config(task), &mut NoObserver)?;
            let m = task_metric(&evaluate(&out.best, &test, 256, 0.5)?, task);
            let chance = permutation_chance(&out.best, &test, &slabels, task, 20)?;
            let close = (m - chance).abs() <= 0.1;
            ok &= close;
            notes.push(format!("shuffled {name} {m:.3} vs chance {chance:.3}"));
        }
        Ok(verdict(ok, notes.join(", ")))
    };
    run().unwrap_or_else(|e| verdict(false, format!("aborted: {e}")))
}

fn bits(x: Option<f64>) -> Option<u64> {
    x.map(f64::to_bits)
}

fn masking_invariance() -> Verdict {
    let run = || -> affuse_core::Result<Verdict> {
        let spec = PlantSpec {
            streams: vec![SynthStream::new("a", 12, true), SynthStream::new("b", 5, false)],
            latent_dim: 4,
            invalid_fraction: 0.1,
            ..PlantSpec::default()
        };
        let (bank, labels) = synth_generate(11, 500, &spec)?;
        let full = Dataset::all_streams(&bank, &labels)?;
        let valid: Vec<u64> = full.frames().iter().copied().filter(|f| !labels.get(*f).is_empty()).collect();
        let injected = full.len() - valid.len();
        let clean = full.with_frames(valid)?;
        let model = FusionModel::new(ModelConfig {
            streams: bank.streams().to_vec(),
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 32,
            window: 1,
            init_seed: 3,
            ..ModelConfig::default()
        })?;

        let losses = |d: &Dataset<'_>| -> affuse_core::Result<(Vec<Option<u64>>, AuWeights)> {
            let weights = dataset_au_weights(d)?;
            let windows = d.windows(1, 1)?;
            let refs: Vec<_> = windows.iter().collect();
            let batch = d.batch(&refs)?;
            let mut g = Graph::new();
            let p = model.params().bind_frozen(&mut g);
            let xs: Vec<_> = batch.inputs.iter().map(|x| g.constant(x.clone())).collect();
            let out = model.forward(&mut g, &p, &xs, &mut Mode::Eval)?;
            let parts = batch_loss(&mut g, &out, &batch, Task::All, 0.5, &weights)?
                .expect("labels present")
                .parts;
            Ok((vec![bits(parts.va), bits(parts.expr), bits(parts.au), bits(parts.total())], weights))
        };
        let (lf, wf) = losses(&full)?;
        let (lc, wc) = losses(&clean)?;
        let rf = evaluate(&model, &full, 64, 0.5)?;
        let rc = evaluate(&model, &clean, 64, 0.5)?;
        let same_losses = lf == lc;
        let same_weights = wf.as_slice().iter().map(|x| x.to_bits()).eq(wc.as_slice().iter().map(|x| x.to_bits()));
        let report_bits = |r: &EvalReport| [r.ccc_v, r.ccc_a, r.f1_expr, r.f1_au, r.score].map(f64::to_bits);
        let same_metrics = report_bits(&rf) == report_bits(&rc);
        let ratio = injected as f64 / full.len() as f64;
        Ok(verdict(
            same_losses && same_weights && same_metrics && injected > 0,
            format!(
                "{injected} invalid frames ({:.1}%) injected; losses {}, AU weights {}, metrics {}",
                100.0 * ratio,
                if same_losses { "bit-identical" } else { "DIFFER" },
                if same_weights { "bit-identical" } else { "DIFFER" },
                if same_metrics { "bit-identical" } else { "DIFFER" },
            ),
        ))
    };
    run().unwrap_or_else(|e| verdict(false, format!("aborted: {e}")))
}

fn determinism() -> Verdict {
    let run = || -> affuse::Result<Verdict> {
        let spec = PlantSpec {
            streams: vec![SynthStream::new("a", 16, true), SynthStream::new("b", 6, false)],
            latent_dim: 4,
            invalid_fraction: 0.05,
            ..PlantSpec::default()
        };
        let (bank, labels) = synth_generate(5, 600, &spec)?;
        let data = Dataset::all_streams(&bank, &labels)?;
        let (tr, val) = data.split(0.2)?;
        let cfg = TrainConfig {
            task: Task::All,
            lr: 2e-3,
            epochs: 4,
            seed: 42,
            verify_gradients: false,
            ..TrainConfig::default()
        };
        let mut artifacts = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| affuse::Error::Failed(e.to_string()))?;
            let log = dir.path().join("runlog.jsonl");
            let ckpt = dir.path().join("best.ckpt");
            let model = FusionModel::new(ModelConfig {
                streams: bank.streams().to_vec(),
                d_model: 16,
                n_heads: 2,
                n_layers: 2,
                d_ff: 32,
                window: 3,
                max_len: 8,
                ..ModelConfig::default()
            })?;
            let mut obs = FileObserver::new(log.clone(), Some(ckpt.clone()), cfg.clone());
            train(model, &tr, &val, &cfg, &mut obs)?;
            let loaded = checkpoint::load(&ckpt)?;
            let report = render_kv(&evaluate(&loaded.model, &val, 32, 0.5)?);
            let read = |p: &std::path::Path| fs::read(p).map_err(|e| affuse::Error::io(p, e));
            artifacts.push((read(&log)?, read(&ckpt)?, report));
        }
        let (a, b) = (&artifacts[0], &artifacts[1]);
        let same_log = a.0 == b.0;
        let same_ckpt = a.1 == b.1;
        let same_eval = a.2 == b.2;
        Ok(verdict(
            same_log && same_ckpt && same_eval,
            format!(
                "run log {} bytes {}, checkpoint {} bytes {}, evaluation {}",
                a.0.len(),
                if same_log { "identical" } else { "DIFFER" },
                a.1.len(),
                if same_ckpt { "identical" } else { "DIFFER" },
                if same_eval { "identical" } else { "DIFFER" },
            ),
        ))
    };
    run().unwrap_or_else(|e| verdict(false, format!("aborted: {e}")))
}

fn ablation_sanity() -> Verdict {
    let run = || -> affuse_core::Result<Verdict> {
        let spec = PlantSpec {
            streams: vec![SynthStream::new("A", 24, true), SynthStream::new("B", 24, false)],
            latent_dim: 4,
            ..PlantSpec::default()
        };
        let (bank, labels) = synth_generate(13, 1000, &spec)?;
        let base = ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            window: 1,
            ..ModelConfig::default()
        };
        let cfg = TrainConfig {
            lr: 2e-3,
            epochs: 15,
            seed: 3,
            verify_gradients: false,
            ..TrainConfig::default()
        };
        let subsets = vec![vec!["A".to_string()], vec!["B".to_string()], vec!["A".to_string(), "B".to_string()]];
        let rows = ablation_run(&bank, &labels, &subsets, &base, &cfg)?;
        let score = |label: &str| rows.iter().find(|r| r.label() == label).map(|r| r.report.score).unwrap();
        let (a, b, ab) = (score("A"), score("B"), score("A+B"));
        Ok(verdict(
            a > b && ab > b,
            format!("score A {a:.4}, A+B {ab:.4}, B {b:.4}"),
        ))
    };
    run().unwrap_or_else(|e| verdict(false, format!("aborted: {e}")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("results-table arithmetic", Duration::from_secs(1), table_arithmetic),
        ("gradient suite", Duration::from_secs(120), gradient_suite),
        ("loss identities", Duration::from_secs(1), loss_identities),
        ("synthetic learnability", Duration::from_secs(600), learnability),
        ("masking invariance", Duration::from_secs(60), masking_invariance),
        ("determinism", Duration::from_secs(120), determinism),
        ("ablation sanity", Duration::from_secs(300), ablation_sanity),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let v = timed(budget, check);
        println!("{} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
