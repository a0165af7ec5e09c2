use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use affuse::report::parse_kv;
use affuse::runlog;

fn affuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_MODEL: [&str; 8] = [
    "--set",
    "model.d_model=16",
    "--set",
    "model.d_ff=32",
    "--set",
    "model.n_layers=1",
    "--set",
    "train.verify_gradients=false",
];

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", "data", "--seed", "7", "--frames", "600", "--streams", "a:12,b:4", "--latent", "4"];
    args.extend_from_slice(extra);
    affuse(&args, dir)
}

#[test]
fn score_prints_the_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    for (args, want) in [
        (["0.414", "0.425", "0.249", "0.433"], "1.10150"),
        (["0.420", "0.451", "0.266", "0.454"], "1.15550"),
        (["0", "0", "0", "0"], "0.00000"),
        (["-0.5", "0.1", "0", "0"], "-0.200000"),
    ] {
        let mut a = vec!["score"];
        a.extend_from_slice(&args);
        let o = affuse(&a, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), want);
    }
    assert_eq!(affuse(&["score", "1", "2"], dir.path()).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_guards_existing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = synth(dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = ["manifest.toml", "a.csv", "b.csv", "va.csv", "expr.csv", "au.csv"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join("data").join(f)).unwrap()).collect();

    let again = synth(dir.path(), &[]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));

    let forced = synth(dir.path(), &["--force"]);
    assert!(forced.status.success());
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join("data").join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let zero = affuse(&["synth", "--out", "z", "--frames", "0"], dir.path());
    assert_eq!(zero.status.code(), Some(2));
    assert!(!dir.path().join("z").exists());
}

#[test]
fn train_then_eval_reproduces_the_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &["--signal", "a"]).status.success());
    let mut args = vec![
        "train", "--manifest", "data/manifest.toml", "--out", "run", "--task", "va", "--epochs", "6", "--lr", "2e-3",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    let o = affuse(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("# effective configuration"));
    assert!(stdout(&o).contains("lr = 0.002"));

    let run = dir.path().join("run");
    let log = runlog::read(&run.join("runlog.jsonl")).unwrap();
    let summary = log.summary.clone().unwrap();
    assert_eq!(log.epochs.len(), 6);
    assert!(log.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1));
    assert!(summary.best.ccc_v > 0.8, "{:?}", summary.best);
    assert!(summary.best.is_consistent(1e-12));

    let kv = affuse(
        &["eval", "--checkpoint", "run/best.ckpt", "--manifest", "data/manifest.toml", "--format", "kv", "--report", "eval.kv"],
        dir.path(),
    );
    assert!(kv.status.success(), "{}", stderr(&kv));
    let table = affuse(&["eval", "--checkpoint", "run/best.ckpt", "--manifest", "data/manifest.toml"], dir.path());
    assert!(table.status.success());
    let reported = parse_kv(Path::new("stdout"), &stdout(&kv)).unwrap();
    let written = parse_kv(Path::new("eval.kv"), &fs::read_to_string(dir.path().join("eval.kv")).unwrap()).unwrap();
    assert_eq!(reported, written);
    let expected = parse_kv(Path::new("report.kv"), &fs::read_to_string(run.join("report.kv")).unwrap()).unwrap();
    assert_eq!(reported, expected);
    for line in stdout(&kv).lines() {
        let value = line.split_once('=').unwrap().1;
        assert!(stdout(&table).contains(value), "{value} missing from table");
    }

    let effective = dir.path().join("run/config.toml");
    let again = affuse(&["train", "--config", effective.to_str().unwrap(), "--out", "run2", "--quiet"], dir.path());
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert_eq!(fs::read(run.join("runlog.jsonl")).unwrap(), fs::read(dir.path().join("run2/runlog.jsonl")).unwrap());
    assert_eq!(fs::read(run.join("best.ckpt")).unwrap(), fs::read(dir.path().join("run2/best.ckpt")).unwrap());
}

#[test]
fn train_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &[]).status.success());
    let mut args = vec!["train", "--manifest", "data/manifest.toml", "--out", "run", "--epochs", "2", "--lr", "0", "--quiet"];
    args.extend_from_slice(&SMALL_MODEL);
    let o = affuse(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("did not converge"));
}

#[test]
fn data_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[[stream]]\nname = \"a\"\ndim = 3\npath = \"a.csv\"\nformat = = 1\n").unwrap();
    let o = affuse(&["train", "--manifest", "bad.toml", "--quiet"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml:5"), "{}", stderr(&o));

    let missing = affuse(&["train", "--manifest", "nowhere.toml", "--quiet"], dir.path());
    assert_eq!(missing.status.code(), Some(2));

    let no_manifest = affuse(&["train", "--quiet"], dir.path());
    assert_eq!(no_manifest.status.code(), Some(2));

    let bad_key = affuse(&["train", "--manifest", "bad.toml", "--set", "train.speed=3"], dir.path());
    assert_eq!(bad_key.status.code(), Some(2));
}

#[test]
fn eval_rejects_mismatched_streams() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &[]).status.success());
    let mut args = vec!["train", "--manifest", "data/manifest.toml", "--out", "run", "--epochs", "1", "--quiet"];
    args.extend_from_slice(&SMALL_MODEL);
    affuse(&args, dir.path());
    assert!(dir.path().join("run/best.ckpt").exists());

    let other = affuse(&["synth", "--out", "other", "--frames", "50", "--streams", "a:12,c:3"], dir.path());
    assert!(other.status.success());
    let o = affuse(&["eval", "--checkpoint", "run/best.ckpt", "--manifest", "other/manifest.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown stream `b`"), "{}", stderr(&o));

    let wide = affuse(&["synth", "--out", "wide", "--frames", "50", "--streams", "a:13,b:4"], dir.path());
    assert!(wide.status.success());
    let o = affuse(&["eval", "--checkpoint", "run/best.ckpt", "--manifest", "wide/manifest.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_fails_by_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let ok = affuse(&["gradcheck", "--seeds", "5", "--op", "softmax"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let out = stdout(&ok);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("PASS softmax"));

    let strict = affuse(&["gradcheck", "--seeds", "3", "--op", "layernorm", "--op", "tanh", "--tol", "1e-12"], dir.path());
    assert_eq!(strict.status.code(), Some(1));
    assert!(stdout(&strict).contains("FAIL"));

    let unknown = affuse(&["gradcheck", "--op", "conv2d"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn ablate_ranks_rows_by_score() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &["--signal", "a"]).status.success());
    let mut args = vec![
        "ablate", "--manifest", "data/manifest.toml", "--subsets", "b;a", "--task", "all", "--epochs", "3", "--lr", "2e-3", "--format",
        "kv", "--quiet",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    let o = affuse(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("row1.features=a\n"), "{out}");
    assert!(out.contains("row2.features=b\n"), "{out}");
}
