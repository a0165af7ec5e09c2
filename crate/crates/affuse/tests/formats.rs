use std::fs;
use std::path::Path;

use affuse::checkpoint;
use affuse::features::{read_binary, read_text, write_binary, write_text};
use affuse::manifest::{load_labels, write_dataset, FeatureFormat, Manifest};
use affuse::runlog;
use affuse::Error;
use affuse_core::data::{synth_generate, Dataset, FeatureBank, LabelSet, PlantSpec, SynthStream, Task};
use affuse_core::model::{FusionModel, ModelConfig, StreamSpec};
use affuse_core::train::{evaluate, train, NoObserver, TrainConfig};

fn bank(seed: u64) -> (FeatureBank, LabelSet) {
    let spec = PlantSpec {
        streams: vec![SynthStream::new("fau", 17, true), SynthStream::new("x", 5, false)],
        latent_dim: 4,
        invalid_fraction: 0.1,
        ..PlantSpec::default()
    };
    synth_generate(seed, 120, &spec).unwrap()
}

fn reload(stream: &str, dim: usize, path: &Path, binary: bool) -> FeatureBank {
    let mut b = FeatureBank::new();
    b.add_stream(StreamSpec::new(stream, dim)).unwrap();
    if binary {
        read_binary(path, stream, &mut b).unwrap();
    } else {
        read_text(path, stream, &mut b).unwrap();
    }
    b
}

#[test]
fn binary_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (b, _) = bank(3);
    let path = dir.path().join("fau.bin");
    write_binary(&path, "fau", &b).unwrap();
    let back = reload("fau", 17, &path, true);
    let a: Vec<_> = b.frames("fau").unwrap().collect();
    let c: Vec<_> = back.frames("fau").unwrap().collect();
    assert_eq!(a.len(), c.len());
    for ((fa, va), (fc, vc)) in a.iter().zip(&c) {
        assert_eq!(fa, fc);
        let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(va), bits(vc));
    }
}

#[test]
fn text_round_trip_within_1e_12() {
    let dir = tempfile::tempdir().unwrap();
    let (b, _) = bank(4);
    let path = dir.path().join("fau.csv");
    write_text(&path, "fau", &b).unwrap();
    let back = reload("fau", 17, &path, false);
    for ((fa, va), (fc, vc)) in b.frames("fau").unwrap().zip(back.frames("fau").unwrap()) {
        assert_eq!(fa, fc);
        for (x, y) in va.iter().zip(vc) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn three_valid_rows_make_a_three_frame_bank() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fau.csv");
    let row = |f: u64| format!("{f},{}\n", vec!["0.5"; 17].join(","));
    fs::write(&path, format!("{}{}{}", row(1), row(2), row(3))).unwrap();
    let b = reload("fau", 17, &path, false);
    assert_eq!(b.frames("fau").unwrap().count(), 3);
}

#[test]
fn short_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fau.csv");
    let good = format!("1,{}\n", vec!["0.5"; 17].join(","));
    let short = format!("2,{}\n", vec!["0.5"; 16].join(","));
    fs::write(&path, format!("frame,values\n{good}{short}")).unwrap();
    let mut b = FeatureBank::new();
    b.add_stream(StreamSpec::new("fau", 17)).unwrap();
    match read_text(&path, "fau", &mut b) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn duplicate_frame_and_bad_number_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    fs::write(&path, "4,1.0,2.0\n4,1.0,2.0\n").unwrap();
    let mut b = FeatureBank::new();
    b.add_stream(StreamSpec::new("s", 2)).unwrap();
    assert!(matches!(read_text(&path, "s", &mut b), Err(Error::Parse { line: 2, .. })));
    fs::write(&path, "4,1.0,abc\n").unwrap();
    let mut b = FeatureBank::new();
    b.add_stream(StreamSpec::new("s", 2)).unwrap();
    assert!(matches!(read_text(&path, "s", &mut b), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn binary_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (b, _) = bank(5);
    let path = dir.path().join("fau.bin");
    write_binary(&path, "fau", &b).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    let mut fresh = FeatureBank::new();
    fresh.add_stream(StreamSpec::new("fau", 17)).unwrap();
    assert!(matches!(read_binary(&path, "fau", &mut fresh), Err(Error::Format { .. })));

    let mut wide = FeatureBank::new();
    wide.add_stream(StreamSpec::new("fau", 18)).unwrap();
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_binary(&path, "fau", &mut wide), Err(Error::Format { .. })));
}

#[test]
fn label_sentinels_become_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let va = dir.path().join("va.csv");
    let expr = dir.path().join("expr.csv");
    let au = dir.path().join("au.csv");
    fs::write(&va, "frame,valence,arousal\n1,-5,-5\n2,0.5,-0.25\n").unwrap();
    fs::write(&expr, "1,7\n2,-1\n").unwrap();
    fs::write(&au, "1,1,0,-1,0,0,0,0,0,0,0,0,1\n").unwrap();
    let mut labels = LabelSet::new();
    load_labels(&va, Task::Va, &mut labels).unwrap();
    load_labels(&expr, Task::Expr, &mut labels).unwrap();
    load_labels(&au, Task::Au, &mut labels).unwrap();
    let one = labels.get(1);
    assert_eq!((one.valence, one.arousal), (None, None));
    assert_eq!(one.expr, Some(7));
    assert_eq!(one.au[0], Some(true));
    assert_eq!(one.au[2], None);
    assert_eq!(one.au[11], Some(true));
    let two = labels.get(2);
    assert_eq!((two.valence, two.arousal), (Some(0.5), Some(-0.25)));
    assert_eq!(two.expr, None);

    fs::write(&va, "3,1.5,0\n").unwrap();
    assert!(matches!(load_labels(&va, Task::Va, &mut labels), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn written_dataset_reloads_identically() {
    for format in [FeatureFormat::Text, FeatureFormat::Binary] {
        let dir = tempfile::tempdir().unwrap();
        let (b, labels) = bank(6);
        let path = dir.path().join("manifest.toml");
        write_dataset(&path, &b, &labels, format).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.stream_names(), vec!["fau", "x"]);
        assert_eq!(m.load_labels().unwrap(), labels);
        let back = m.load_bank(None).unwrap();
        assert_eq!(back.frame_counts(), b.frame_counts());
        if format == FeatureFormat::Binary {
            for s in ["fau", "x"] {
                assert!(b.frames(s).unwrap().eq(back.frames(s).unwrap()));
            }
        }
        let only = m.load_bank(Some(&["x".to_string()])).unwrap();
        assert_eq!(only.streams().len(), 1);
        assert!(matches!(
            m.load_bank(Some(&["nope".to_string()])),
            Err(Error::Core(affuse_core::Error::UnknownStream(_)))
        ));
    }
}

#[test]
fn stream_order_does_not_change_alignment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "1,0.1\n2,0.2\n3,0.3\n").unwrap();
    fs::write(dir.path().join("b.csv"), "2,0.1\n3,0.2\n4,0.3\n").unwrap();
    let m = |first: &str, second: &str| {
        format!(
            "[[stream]]\nname = \"{first}\"\ndim = 1\npath = \"{first}.csv\"\n\n[[stream]]\nname = \"{second}\"\ndim = 1\npath = \"{second}.csv\"\n"
        )
    };
    let p1 = dir.path().join("ab.toml");
    let p2 = dir.path().join("ba.toml");
    fs::write(&p1, m("a", "b")).unwrap();
    fs::write(&p2, m("b", "a")).unwrap();
    let b1 = Manifest::load(&p1).unwrap().load_bank(None).unwrap();
    let b2 = Manifest::load(&p2).unwrap().load_bank(None).unwrap();
    assert_eq!(b1.aligned_frames(&["a", "b"]).unwrap(), vec![2, 3]);
    assert_eq!(b2.aligned_frames(&["b", "a"]).unwrap(), vec![2, 3]);
}

#[test]
fn checkpoint_round_trip_keeps_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (b, labels) = bank(7);
    let data = Dataset::all_streams(&b, &labels).unwrap();
    let (tr, val) = data.split(0.25).unwrap();
    let model = FusionModel::new(ModelConfig {
        streams: b.streams().to_vec(),
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        window: 2,
        max_len: 8,
        ..ModelConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        task: Task::All,
        lr: 1e-3,
        epochs: 2,
        verify_gradients: false,
        ..TrainConfig::default()
    };
    let out = train(model, &tr, &val, &cfg, &mut NoObserver).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &out.best, &cfg).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.train, cfg);
    let r1 = evaluate(&out.best, &val, 32, 0.5).unwrap();
    let r2 = evaluate(&back.model, &val, 32, 0.5).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1, out.summary().best);

    let log = dir.path().join("log.jsonl");
    fs::write(&log, runlog::render(&out.log)).unwrap();
    assert_eq!(runlog::read(&log).unwrap(), out.log);
}
