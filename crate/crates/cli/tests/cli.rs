use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structnode"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{"system": "harmonic_oscillator", "n_train": 5, "n_test": 4, "epochs": 20, "batch_size": 5}"#;

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["generate", "--config", path(&cfg), "--out", path(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for (sub, files) in [("train", 6), ("test", 5)] {
        let (fa, fb) = (read_dir_sorted(&a.join(sub)), read_dir_sorted(&b.join(sub)));
        assert_eq!(fa.len(), files);
        assert_eq!(fa, fb);
    }
    let o = run(&["generate", "--config", path(&cfg), "--seed", "7", "--out", path(&tmp.path().join("c"))]);
    assert_eq!(code(&o), 0);
    assert_ne!(read_dir_sorted(&a.join("train")), read_dir_sorted(&tmp.path().join("c/train")));
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = write_config(tmp.path(), "zero.json", r#"{"n_train": 0}"#);
    let o = run(&["generate", "--config", path(&zero), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_train"));

    let unknown = write_config(tmp.path(), "unknown.json", r#"{"learning_rate": 0.1}"#);
    let o = run(&["generate", "--config", path(&unknown), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let version = write_config(tmp.path(), "version.json", r#"{"schema_version": 9}"#);
    assert_eq!(code(&run(&["generate", "--config", path(&version), "--out", path(tmp.path())])), 2);
}

#[test]
fn missing_files_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", path(&tmp.path().join("nowhere")), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 3);
    let o = run(&["generate", "--config", path(&tmp.path().join("absent.json")), "--out", path(tmp.path())]);
    assert_eq!(code(&o), 3);
}

#[test]
fn round_trip_and_short_test_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    for cmd in ["generate", "train", "eval"] {
        let o = run(&[cmd, "--config", path(&cfg), "--out", path(&out)]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        if cmd == "eval" {
            assert!(String::from_utf8_lossy(&o.stdout).contains("median rmse"));
        }
    }
    let model: Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["schema_version"], 1);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["rmse"].as_array().unwrap().len(), 4);
    assert!(metrics["median"].as_f64().unwrap().is_finite());
    let preds = read_dir_sorted(&out.join("predictions"));
    assert_eq!(preds.len(), 4);
    let header = String::from_utf8_lossy(&preds[0].1).lines().next().unwrap().to_string();
    assert_eq!(header, "t,y1,y_hat1,x_hat1,x_hat2");

    // 10 samples cannot fill the 21-sample recognition window
    let short_cfg = write_config(tmp.path(), "short.json", r#"{"n_train": 2, "n_samples": 10}"#);
    let short = tmp.path().join("short");
    assert_eq!(code(&run(&["generate", "--config", path(&short_cfg), "--out", path(&short)])), 0);
    let o = run(&[
        "eval",
        "--config",
        path(&cfg),
        "--out",
        path(&out),
        "--data",
        path(&short.join("train")),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
