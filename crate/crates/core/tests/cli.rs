use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY_MODEL: &[&str] =
    &["--frames", "5", "--size", "16", "--channels", "1", "--conv-filters", "2", "--dense", "4"];

fn stvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stvc")).args(args).env_remove("STVC_OUT").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stvc(args);
    assert!(
        out.status.success(),
        "stvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out", p(dir), "--seed", "4", "--normal", "3", "--lame", "3"];
    args.extend_from_slice(&["--frames", "8", "--size", "16"]);
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("manifest.jsonl")
}

fn train(manifest: &Path, out: &Path) {
    let mut args = vec!["train", "--manifest", p(manifest), "--out", p(out), "--seed", "4", "--epochs", "2"];
    args.extend_from_slice(TINY_MODEL);
    ok(&args);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_writes_run_config() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &[]);
    synth(&b, &[]);
    for name in ["manifest.jsonl", "videos/normal_000.stvt", "videos/lame_002.stvt"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let rc = read_json(&a.join("run_config.json"));
    assert_eq!(rc["command"], "synth");
    assert_eq!(rc["seed"], 4);
    assert_eq!(rc["synth"]["lame"], 3);
}

#[test]
fn ingest_reports_counts() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &[]);
    let out = tmp.path().join("ingest");
    let stdout = ok(&["ingest", "--manifest", p(&manifest), "--out", p(&out), "--frames", "5", "--size", "16", "--channels", "1", "--intermediate", "0"]);
    assert!(stdout.contains("4 train"), "{stdout}");
    let summary = read_json(&out.join("ingest_summary.json"));
    assert_eq!(summary["train_frames"], 20);
    assert_eq!(summary["augmented_train_frames"], 40);
    assert_eq!(summary["test_frames"], 10);
}

#[test]
fn missing_manifest_exits_2_naming_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere.jsonl");
    let out = stvc(&["train", "--manifest", p(&missing), "--out", p(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.jsonl"));
}

#[test]
fn single_class_training_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &["--lame", "0"]);
    let mut args = vec!["train", "--manifest", p(&manifest), "--out", p(tmp.path())];
    args.extend_from_slice(TINY_MODEL);
    let out = stvc(&args);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_evaluate_predict_round_trip() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &[]);
    let run = tmp.path().join("run");
    train(&manifest, &run);
    let ckpt = run.join("checkpoint.stvc");
    assert!(ckpt.exists());
    assert_eq!(read_json(&run.join("history.json")).as_array().unwrap().len(), 2);
    assert_eq!(read_json(&run.join("run_config.json"))["model"]["conv_filters"], serde_json::json!([2]));

    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    for e in [&e1, &e2] {
        let table = ok(&["evaluate", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(e)]);
        assert!(table.contains("Accuracy"));
    }
    let r1 = std::fs::read(e1.join("report.json")).unwrap();
    assert_eq!(r1, std::fs::read(e2.join("report.json")).unwrap());
    assert!(e1.join("report.txt").exists());

    let report: Value = serde_json::from_slice(&r1).unwrap();
    let verdicts = report["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 2);
    let corpus = tmp.path().join("corpus");
    for v in verdicts {
        let id = v["id"].as_str().unwrap();
        let source = corpus.join(format!("videos/{id}.stvt"));
        let stdout = ok(&["predict", "--checkpoint", p(&ckpt), "--source", p(&source)]);
        let predicted = v["predicted"].as_str().unwrap();
        let lame = v["lame_frames"].as_u64().unwrap();
        let agreeing = if predicted == "lame" { lame } else { 5 - lame };
        let want = format!("verdict: {predicted} ({agreeing}/5 frames)");
        assert!(stdout.contains(&want), "{id}: expected {want:?} in\n{stdout}");
    }
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&manifest, &a);
    train(&manifest, &b);
    for name in ["checkpoint.stvc", "history.json", "run_config.json"] {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        if name == "run_config.json" {
            // Only paths under the output directory differ.
            let (mut x, mut y): (Value, Value) = (serde_json::from_slice(&x).unwrap(), serde_json::from_slice(&y).unwrap());
            for key in ["out", "checkpoint"] {
                x[key] = Value::Null;
                y[key] = Value::Null;
            }
            assert_eq!(x, y);
        } else {
            assert_eq!(x, y, "{name}");
        }
    }
}

#[test]
fn malformed_tensor_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &[]);
    let run = tmp.path().join("run");
    train(&manifest, &run);
    let bad = tmp.path().join("bad.stvt");
    std::fs::write(&bad, b"STVT not really a tensor").unwrap();
    let out = stvc(&["predict", "--checkpoint", p(&run.join("checkpoint.stvc")), "--source", p(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.stvt"));

    let corrupt = tmp.path().join("corrupt.stvc");
    let mut bytes = std::fs::read(run.join("checkpoint.stvc")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&corrupt, bytes).unwrap();
    let out = stvc(&["evaluate", "--checkpoint", p(&corrupt), "--manifest", p(&manifest), "--out", p(tmp.path())]);
    assert_ne!(code(&out), 0);
}

#[test]
fn empty_test_split_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(&tmp.path().join("corpus"), &["--test-fraction", "0"]);
    let run = tmp.path().join("run");
    train(&manifest, &run);
    let out = stvc(&["evaluate", "--checkpoint", p(&run.join("checkpoint.stvc")), "--manifest", p(&manifest), "--out", p(&run)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no test videos"));
}

#[test]
fn config_file_layers_under_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[synth]\nnormal = 2\nlame = 2\nframes = 6\nheight = 16\nwidth = 16\n").unwrap();
    let out = tmp.path().join("o");
    ok(&["synth", "--config", p(&cfg), "--out", p(&out), "--lame", "4"]);
    let rc = read_json(&out.join("run_config.json"));
    assert_eq!(rc["seed"], 11);
    assert_eq!(rc["synth"]["normal"], 2);
    assert_eq!(rc["synth"]["lame"], 4);
    assert_eq!(rc["synth"]["frames"], 6);

    let out2 = tmp.path().join("o2");
    ok(&["synth", "--config", p(&cfg), "--out", p(&out2), "--seed", "12"]);
    assert_eq!(read_json(&out2.join("run_config.json"))["seed"], 12);

    std::fs::write(&cfg, "[synth]\nnormals = 2\n").unwrap();
    let bad = stvc(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("env-out");
    let status = Command::new(env!("CARGO_BIN_EXE_stvc"))
        .args(["synth", "--normal", "1", "--lame", "1", "--frames", "4", "--size", "16"])
        .env("STVC_OUT", &out)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("manifest.jsonl").exists());
}

#[test]
fn gradcheck_verb() {
    let stdout = ok(&["gradcheck", "--op", "dense"]);
    assert!(stdout.contains("dense") && stdout.contains("pass"));
    assert!(!stdout.contains("conv3d"));
    assert_eq!(code(&stvc(&["gradcheck", "--op", "conv9d"])), 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&stvc(&["train", "--model", "resnet"])), 2);
    assert_eq!(code(&stvc(&["frobnicate"])), 2);
}
