use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gestalt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gestalt"))
        .args(args)
        .env_remove("GESTALT_OUT")
        .output()
        .expect("binary runs")
}

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = gestalt(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "preprocess", "pretrain", "finetune", "predict", "evaluate", "experiment"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(gestalt(&["experiment", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_out_is_usage_error() {
    let cfg = tiny_config();
    let out = gestalt(&["experiment", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GESTALT_OUT"));
}

#[test]
fn missing_manifest_is_data_error_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.tsv");
    let out = gestalt(&[
        "predict",
        "--models",
        s(dir.path()),
        "--manifest",
        s(&missing),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"multiclass\"\nseed = \"seven\"\n").unwrap();
    let out = gestalt(&["experiment", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_twice_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = gestalt(&["experiment", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for file in ["report.json", "predictions.jsonl", "checkpoints/eyes-finetuned.ckpt"] {
        let x = std::fs::read(a.join(file)).unwrap();
        let y = std::fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |x: &str| dir.path().join(x);
    let cfg = tiny_config();
    let run = |args: &[&str]| {
        let r = gestalt(args);
        assert_eq!(r.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    };
    run(&["synth", "--classes", "3", "--per-class", "8", "--test-per-class", "2", "--seed", "1", "--out", s(&p("data"))]);
    let manifest = p("data/manifest.tsv");
    run(&["preprocess", "--config", s(&cfg), "--manifest", s(&manifest), "--out", s(&p("pre"))]);
    assert!(p("pre/template.tsv").exists());
    run(&["pretrain", "--config", s(&cfg), "--out", s(&p("pt"))]);
    run(&["finetune", "--config", s(&cfg), "--base", s(&p("pt/checkpoints")), "--manifest", s(&manifest), "--out", s(&p("ft"))]);
    run(&[
        "predict", "--config", s(&cfg), "--models", s(&p("ft/checkpoints")), "--manifest", s(&manifest), "--split", "test",
        "--out", s(&p("pr")),
    ]);
    let lines = std::fs::read_to_string(p("pr/predictions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);
    run(&["evaluate", "--config", s(&cfg), "--predictions", s(&p("pr/predictions.jsonl")), "--out", s(&p("ev"))]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("ev/evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 6);
}
