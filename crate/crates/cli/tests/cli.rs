use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use effort_core::effort::MetricsFile;
use effort_core::motion::{load_motion, save_motion};
use effort_core::{baseline_metrics, default_group_map, effort_metrics, MotionSequence};
use serde_json::Value;
use tempfile::TempDir;

fn effortgen(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_effortgen"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = effortgen(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    effortgen(args, cwd).status.code().expect("exit code")
}

/// A tiny trained checkpoint shared by the sampling tests.
fn model() -> &'static (TempDir, PathBuf) {
    static MODEL: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        ok(
            &[
                "synth",
                "--out-dir",
                "corpus",
                "--per-action",
                "2",
                "--frames",
                "12",
                "--seed",
                "1",
            ],
            d,
        );
        fs::write(
            d.join("train.json"),
            r#"{"iterations": 3, "batch_size": 2, "latent_dimension": 16}"#,
        )
        .unwrap();
        ok(
            &[
                "train",
                "--data",
                "corpus",
                "--out",
                "model/m.ckpt",
                "--config",
                "train.json",
            ],
            d,
        );
        let path = d.join("model/m.ckpt");
        (dir, path)
    })
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// Every output file except the run record matches byte for byte.
fn assert_same_outputs(a: &Path, b: &Path) {
    let fa: Vec<PathBuf> = files(a).into_iter().filter(|p| !p.ends_with("run.json")).collect();
    assert!(!fa.is_empty());
    for f in fa {
        let other = b.join(f.file_name().unwrap());
        assert_eq!(
            fs::read(&f).unwrap(),
            fs::read(&other).unwrap(),
            "{} differs",
            f.display()
        );
    }
}

#[test]
fn baseline_prints_reference_table() {
    let dir = TempDir::new().unwrap();
    let text = ok(&["metrics", "baseline"], dir.path());
    let file: MetricsFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.regions[0], "root");
    assert_eq!((file.peak[0], file.collective[0]), (0.010, 1.256));
    assert_eq!((file.peak[5], file.collective[5]), (0.014, 1.295));
    assert_eq!(file.to_metrics().unwrap(), baseline_metrics());
    assert!(dir.path().join("run.json").exists());
}

#[test]
fn extract_matches_library_and_static_is_zero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let frames: Vec<Vec<[f64; 3]>> = (0..9)
        .map(|t| {
            (0..22)
                .map(|j| [0.01 * (t * j) as f64, (t as f64 * 0.3).sin(), j as f64])
                .collect()
        })
        .collect();
    let m = MotionSequence::from_frames(20, frames, None).unwrap();
    save_motion(&m, d.join("moving.json")).unwrap();
    let text = ok(&["metrics", "extract", "moving.json"], d);
    let file: MetricsFile = serde_json::from_str(&text).unwrap();
    let direct = effort_metrics(&load_motion(d.join("moving.json")).unwrap(), &default_group_map()).unwrap();
    assert_eq!(file.to_metrics().unwrap(), direct);

    let still = MotionSequence::static_pose(20, &[[0.5, 1.0, -0.2]; 22], 10, None).unwrap();
    save_motion(&still, d.join("still.json")).unwrap();
    ok(
        &["metrics", "extract", "still.json", "--out", "out/still_metrics.json"],
        d,
    );
    let file: MetricsFile =
        serde_json::from_str(&fs::read_to_string(d.join("out/still_metrics.json")).unwrap()).unwrap();
    assert!(file.peak.iter().chain(&file.collective).all(|&v| v == 0.0));
    assert!(d.join("out/run.json").exists());
}

#[test]
fn augment_triples_a_corpus() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth",
            "--out-dir",
            "corpus",
            "--actions",
            "1,4",
            "--per-action",
            "5",
            "--frames",
            "20",
        ],
        d,
    );
    ok(&["augment", "corpus", "--out-dir", "aug", "--k", "1", "--m", "1"], d);
    let manifest = fs::read_to_string(d.join("aug/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 30);
}

#[test]
fn generate_is_deterministic_and_unit_scale_uses_baseline() {
    let (_, ckpt) = model();
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ck = ckpt.to_str().unwrap();
    let args = |out: &'static str| {
        vec![
            "generate",
            "--model",
            ck,
            "--out-dir",
            out,
            "--prompt",
            "a man waves",
            "--frames",
            "12",
            "--steps",
            "3",
            "--scale",
            "1.0,1.2",
            "--seed",
            "5",
        ]
    };
    ok(&args("a"), d);
    ok(&args("b"), d);
    assert_same_outputs(&d.join("a"), &d.join("b"));

    let line: Value = serde_json::from_str(
        fs::read_to_string(d.join("a/samples.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(line["scale"], 1.0);
    let target: MetricsFile = serde_json::from_value(line["target"].clone()).unwrap();
    assert_eq!(target.to_metrics().unwrap(), baseline_metrics());
}

#[test]
fn set_metric_and_regions_shape_the_target() {
    let (_, ckpt) = model();
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        &[
            "generate",
            "--model",
            ckpt.to_str().unwrap(),
            "--out-dir",
            "g",
            "--frames",
            "8",
            "--steps",
            "2",
            "--scale",
            "2",
            "--regions",
            "left_upper,right_upper",
            "--set-metric",
            "head=0.3,1.0",
        ],
        d,
    );
    let line: Value = serde_json::from_str(fs::read_to_string(d.join("g/samples.jsonl")).unwrap().trim()).unwrap();
    let t: MetricsFile = serde_json::from_value(line["target"].clone()).unwrap();
    let b = baseline_metrics();
    assert_eq!(t.peak[0], b.peak(0));
    assert_eq!(t.peak[4], 2.0 * b.peak(4));
    assert_eq!(t.collective[5], 2.0 * b.collective(5));
    assert_eq!((t.peak[6], t.collective[6]), (0.3, 1.0));
}

#[test]
fn trend_over_full_vocabulary_emits_every_series() {
    let (_, ckpt) = model();
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let stdout = ok(
        &[
            "evaluate",
            "trend",
            "--model",
            ckpt.to_str().unwrap(),
            "--out-dir",
            "t",
            "--frames",
            "6",
            "--steps",
            "1",
            "--seeds",
            "0",
        ],
        d,
    );
    assert!(stdout.contains("structural series: 196"), "{stdout}");
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("t/report.json")).unwrap()).unwrap();
    assert_eq!(report["structural"].as_array().unwrap().len(), 14 * 7 * 2);
    assert_eq!(report["laban"].as_array().unwrap().len(), 14 * 3);
    let csv = fs::read_to_string(d.join("t/series.csv")).unwrap();
    // Header plus (7 regions × 2 + 3 Laban) rows per sample.
    assert_eq!(csv.lines().count(), 1 + 14 * 7 * (7 * 2 + 3));
}

#[test]
fn every_run_replays_byte_identically() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        &[
            "synth",
            "--out-dir",
            "corpus",
            "--actions",
            "4,10",
            "--per-action",
            "2",
            "--frames",
            "10",
            "--seed",
            "9",
        ],
        d,
    );
    ok(&["augment", "corpus", "--out-dir", "aug", "--m", "1,2"], d);
    fs::write(
        d.join("train.json"),
        r#"{"iterations": 3, "batch_size": 3, "latent_dimension": 16}"#,
    )
    .unwrap();
    ok(
        &[
            "train",
            "--data",
            "aug",
            "--out",
            "model/m.ckpt",
            "--config",
            "train.json",
            "--seed",
            "4",
        ],
        d,
    );
    ok(
        &[
            "generate",
            "--model",
            "model/m.ckpt",
            "--out-dir",
            "gen",
            "--prompt",
            "a man squats",
            "--frames",
            "8",
            "--steps",
            "3",
            "--scale",
            "0.8,1.1",
        ],
        d,
    );
    ok(
        &[
            "evaluate",
            "trend",
            "--model",
            "model/m.ckpt",
            "--out-dir",
            "trend",
            "--prompts",
            "a man waves",
            "--frames",
            "6",
            "--steps",
            "2",
            "--seeds",
            "0,1",
        ],
        d,
    );
    ok(
        &[
            "metrics",
            "extract",
            "corpus/0000_a_man_waves.json",
            "--out",
            "metrics/m.json",
        ],
        d,
    );

    for out in ["corpus", "aug", "model", "gen", "trend", "metrics"] {
        let replay_dir = format!("replay_{out}");
        ok(&["replay", &format!("{out}/run.json"), "--out-dir", &replay_dir], d);
        assert_same_outputs(&d.join(out), &d.join(&replay_dir));
        let a: Value = serde_json::from_str(&fs::read_to_string(d.join(out).join("run.json")).unwrap()).unwrap();
        let b: Value =
            serde_json::from_str(&fs::read_to_string(d.join(&replay_dir).join("run.json")).unwrap()).unwrap();
        assert_eq!(a["invocation"]["command"], b["invocation"]["command"]);
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let (_, ckpt) = model();
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("gen.json"),
        r#"{"seed": 3, "sampling": {"steps": 2, "frames": 7, "guidance": 2.0}}"#,
    )
    .unwrap();
    ok(
        &[
            "generate",
            "--model",
            ckpt.to_str().unwrap(),
            "--out-dir",
            "g",
            "--config",
            "gen.json",
            "--frames",
            "6",
        ],
        d,
    );
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("g/run.json")).unwrap()).unwrap();
    let p = &run["invocation"]["params"];
    assert_eq!(p["seed"], 3);
    assert_eq!(p["sampling"]["steps"], 2);
    assert_eq!(p["sampling"]["frames"], 6);
    assert_eq!(p["sampling"]["guidance"], 2.0);
    assert_eq!(p["sampling"]["scales"], serde_json::json!([1.0]));
    let m = load_motion(d.join("g/sample_s1.json")).unwrap();
    assert_eq!(m.frames(), 6);
}

#[test]
fn exit_codes() {
    let (_, ckpt) = model();
    let ck = ckpt.to_str().unwrap();
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&["generate", "--bogus"], d), 2);
    assert_eq!(
        code(&["generate", "--model", ck, "--out-dir", "x", "--scale", "2..1"], d),
        2
    );
    assert_eq!(code(&["metrics", "baseline", "--config", "x.json"], d), 2);
    assert_eq!(code(&["metrics", "extract", "missing.json"], d), 3);
    fs::write(d.join("bad.json"), "{").unwrap();
    assert_eq!(code(&["metrics", "extract", "bad.json"], d), 4);
    assert_eq!(
        code(
            &["generate", "--model", ck, "--out-dir", "x", "--prompt", "a man flies"],
            d
        ),
        4
    );
    assert_eq!(
        code(&["generate", "--model", ck, "--out-dir", "x", "--regions", "tail"], d),
        4
    );
    assert_eq!(code(&["generate", "--model", "absent.ckpt", "--out-dir", "x"], d), 5);
    assert_eq!(
        code(&["evaluate", "trend", "--model", "absent.ckpt", "--out-dir", "x"], d),
        5
    );
    assert_eq!(code(&["--version"], d), 0);
}
