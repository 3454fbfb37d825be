use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn heatrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatrank"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

/// Writes a configuration small enough to run in a few seconds.
fn tiny_config(dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_heatrank"))
        .args(["config", "--preset", "desk", "--methods", "gradients,occlusion,lime,mean-aggregate"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut c: Value = serde_json::from_slice(&out.stdout).unwrap();
    c["data"]["n_items"] = 60.into();
    c["data"]["synth"]["height"] = 32.into();
    c["data"]["synth"]["width"] = 32.into();
    c["train"]["epochs"] = 1.into();
    c["train"]["bn_calibration_images"] = 8.into();
    c["explain"]["samples"] = 32.into();
    c["evaluation"]["images"] = 3.into();
    c["evaluation"]["sensitivity"]["samples"] = 2.into();
    c["evaluation"]["sensitivity"]["images"] = 1.into();
    c["evaluation"]["robustness"]["augmentations"] = serde_json::json!(["hue"]);
    c["evaluation"]["robustness"]["grid"] = 3.into();
    c["evaluation"]["robustness"]["calibration_images"] = 2.into();
    c["evaluation"]["robustness"]["images"] = 1.into();
    c["ranking"]["monte_carlo"] = 4.into();
    c["render"]["images"] = 1.into();
    let path = dir.join("tiny.json");
    std::fs::write(&path, c.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn evaluate_without_checkpoint_names_the_missing_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = heatrank(dir.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["kind"], "missing");
    let path = err["path"].as_str().unwrap();
    assert!(path.ends_with("canonized.json"), "{path}");
    assert!(err["message"].as_str().unwrap().contains(path));
}

#[test]
fn bad_flags_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = heatrank(dir.path(), &["rank", "--methods", "gradients,telepathy"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "usage");
    assert!(err["message"].as_str().unwrap().contains("telepathy"));

    let out = heatrank(dir.path(), &["rank", "--methods", "gradients,mean-aggregate"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["kind"], "invalid_input");
}

#[test]
fn rank_reruns_are_byte_identical_and_stale_inputs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = heatrank(dir.path(), &["pipeline", "--config", &config]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    let hash = summary["config_hash"].as_str().unwrap().to_string();

    let ranking = dir.path().join("out/discolor/ranking");
    let read_all = || {
        let mut files: Vec<_> = std::fs::read_dir(&ranking)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.clone(), std::fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let before = read_all();
    assert_eq!(before.len(), 6);
    for (path, bytes) in &before {
        assert!(String::from_utf8_lossy(bytes).contains(&hash), "{}", path.display());
    }
    let out = heatrank(dir.path(), &["rank", "--config", &config]);
    assert!(out.status.success());
    assert_eq!(read_all(), before);

    let out = heatrank(dir.path(), &["rank", "--config", &config, "--seed", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["kind"], "stale");
    assert!(err["message"].as_str().unwrap().contains("--force"));
    let out = heatrank(dir.path(), &["rank", "--config", &config, "--seed", "5", "--force"]);
    assert!(out.status.success());
}
