use std::path::Path;
use std::process::{Command, Output};

fn dualdub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualdub")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn selftest_exits_zero() {
    let o = dualdub(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let o = dualdub(&["selftest", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(dualdub(&["train", "--stage", "4"]).status.code(), Some(1));
    assert_eq!(dualdub(&["--help"]).status.code(), Some(0));
}

#[test]
fn stage_two_without_stage_one_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualdub(&["--out", &out_arg(dir.path()), "--profile", "smoke", "train", "--stage", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing prior checkpoint"));
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"profile": "nope"}"#).unwrap();
    let o = dualdub(&["--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path()), "synth"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generate_before_training_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(dualdub(&["--out", &out, "--profile", "smoke", "synth"]).status.code(), Some(0));
    let o = dualdub(&["--out", &out, "generate"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn step_by_step_pipeline_emits_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let steps: [&[&str]; 9] = [
        &["synth"],
        &["train", "--stage", "1"],
        &["train", "--stage", "2"],
        &["train", "--stage", "3"],
        &["vae-train"],
        &["flow-train"],
        &["casp-train"],
        &["generate", "--wav"],
        &["eval"],
    ];
    let mut last = None;
    for (i, s) in steps.iter().enumerate() {
        let mut args = vec!["--out", &out];
        if i == 0 {
            args.extend(["--profile", "smoke", "--seed", "5"]);
        }
        args.extend_from_slice(s);
        let o = dualdub(&args);
        assert_eq!(o.status.code(), Some(0), "{s:?}: {}", String::from_utf8_lossy(&o.stderr));
        last = Some(o);
    }
    let report: serde_json::Value = serde_json::from_slice(&last.unwrap().stdout).unwrap();
    assert!(report["metrics"]["casp_top1"].is_number());
    assert!(report["pass"].is_object());
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("generated").read_dir().unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "wav")));

    // a different seed changes the config hash, so old checkpoints need --force
    assert_eq!(dualdub(&["--out", &out, "--seed", "6", "generate"]).status.code(), Some(1));
    assert_eq!(dualdub(&["--out", &out, "--seed", "6", "--force", "generate"]).status.code(), Some(0));
}
