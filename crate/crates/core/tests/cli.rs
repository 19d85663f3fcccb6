use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leanstereo::data::{read_pfm_disparity, DatasetKind, DatasetSpec, Split};

const BIN: &str = env!("CARGO_BIN_EXE_leanstereo");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("LEANSTEREO_DEVICE")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn leanstereo")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny desk run: two 64x128 pairs, a handful of iterations.
fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(
        &p,
        "preset = desk\n# small and fast\nsynth.count = 2\ntrain.iterations = 4\ntrain.batch_size = 2\ntrain.val_every = 2\n",
    )
    .unwrap();
    p
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn synth_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--set",
            "preset=desk",
            "--set",
            "synth.count=20",
            "--seed",
            "7",
            "--out",
            s(d),
        ]);
    }
    let fa = files_of(&a);
    assert_eq!(fa.len(), 60);
    assert_eq!(fa, files_of(&b));
    let spec = DatasetSpec {
        root: a.clone(),
        split: Split::Train,
        kind: DatasetKind::Synthetic,
        crop: (64, 128),
    };
    assert_eq!(
        leanstereo::data::Dataset::open(&spec, 64.0).unwrap().len(),
        20
    );
}

#[test]
fn profile_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = ok(&[
        "profile",
        "--set",
        "preset=desk",
        "--out",
        s(&t.path().join("a")),
    ]);
    let b = ok(&[
        "profile",
        "--set",
        "preset=desk",
        "--out",
        s(&t.path().join("b")),
    ]);
    assert_eq!(a.stdout, b.stdout);
    let text = fs::read_to_string(t.path().join("a/profile.txt")).unwrap();
    assert!(text.contains("params=785704"));
    assert_eq!(
        text,
        fs::read_to_string(t.path().join("b/profile.txt")).unwrap()
    );
}

#[test]
fn stub_benchmark_reports_three_runs() {
    let t = tempfile::tempdir().unwrap();
    ok(&[
        "benchmark",
        "--set",
        "preset=desk",
        "--set",
        "bench.warmup=2",
        "--set",
        "bench.timed=5",
        "--stub-ms",
        "1",
        "--out",
        s(t.path()),
    ]);
    let text = fs::read_to_string(t.path().join("benchmark.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("run=")).count(), 3);
    assert!(text.contains("overall_mean_ms="));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let t = tempfile::tempdir().unwrap();
    let out = run(&[
        "infer",
        "--checkpoint",
        "x.ckpt",
        "--left",
        "l.png",
        "--out",
        s(t.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["profile", "--set", "no.such.key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let bogus = t.path().join("bogus.ckpt");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = run(&["profile", "--set", "preset=desk", "--checkpoint", s(&bogus)]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "evaluate",
        "--set",
        "preset=desk",
        "--checkpoint",
        s(&t.path().join("missing.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&["profile", "--set", "preset=desk", "--device", "cuda"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn train_evaluate_infer_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--seed", "3", "--out", s(d)]);
    }
    for f in [
        "best.ckpt",
        "last.ckpt",
        "loss_curve.csv",
        "resolved_config.txt",
    ] {
        assert!(a.join(f).is_file(), "missing {}", f);
    }
    let curve = fs::read_to_string(a.join("loss_curve.csv")).unwrap();
    assert_eq!(curve, fs::read_to_string(b.join("loss_curve.csv")).unwrap());
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows[0], "iteration,lr,loss,val_epe");
    assert_eq!(rows.len(), 5);
    assert!(rows[2].split(',').nth(3).is_some_and(|v| !v.is_empty()));

    // the resolved config alone reproduces the run
    let c = t.path().join("c");
    ok(&[
        "train",
        "--config",
        s(&a.join("resolved_config.txt")),
        "--out",
        s(&c),
    ]);
    assert_eq!(curve, fs::read_to_string(c.join("loss_curve.csv")).unwrap());

    let ev = t.path().join("eval");
    ok(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--checkpoint",
        s(&a.join("best.ckpt")),
        "--split",
        "train",
        "--out",
        s(&ev),
    ]);
    let metrics = fs::read_to_string(ev.join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("EPE(px)"));
    assert!(metrics.contains("sample=1"));

    let data = t.path().join("data");
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--seed",
        "3",
        "--out",
        s(&data),
    ]);
    let inf = t.path().join("infer");
    let train = data.join("train");
    ok(&[
        "infer",
        "--checkpoint",
        s(&a.join("best.ckpt")),
        "--left",
        s(&train.join("left/000000.png")),
        "--right",
        s(&train.join("right/000000.png")),
        "--gt",
        s(&train.join("disparity/000000.pfm")),
        "--out",
        s(&inf),
    ]);
    for f in ["disparity.pfm", "disparity.png", "error.png", "metrics.txt"] {
        assert!(inf.join(f).is_file(), "missing {}", f);
    }
    let pred = read_pfm_disparity(inf.join("disparity.pfm")).unwrap();
    assert_eq!(pred.shape(), [64, 128]);
    let ck = leanstereo::checkpoint::Checkpoint::load(a.join("best.ckpt")).unwrap();
    let model = ck.into_model().unwrap();
    let left = leanstereo::data::io::read_rgb(train.join("left/000000.png")).unwrap();
    let right = leanstereo::data::io::read_rgb(train.join("right/000000.png")).unwrap();
    let sample = leanstereo::data::StereoSample {
        gt: leanstereo::Tensor::zeros(&[64, 128]),
        valid: vec![false; 64 * 128],
        left,
        right,
    };
    assert_eq!(
        leanstereo::evaluate::predict_sample(&model, &sample).unwrap(),
        pred
    );
}

#[test]
fn resume_continues_iteration_count() {
    let t = tempfile::tempdir().unwrap();
    let cfg = tiny_config(t.path());
    let a = t.path().join("a");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "train.iterations=2",
        "--out",
        s(&a),
    ]);
    let b = t.path().join("b");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&a.join("last.ckpt")),
        "--out",
        s(&b),
    ]);
    let curve = fs::read_to_string(b.join("loss_curve.csv")).unwrap();
    let first: Vec<&str> = curve.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "3");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "head.base_width=8",
        "--checkpoint",
        s(&a.join("last.ckpt")),
        "--out",
        s(&t.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
