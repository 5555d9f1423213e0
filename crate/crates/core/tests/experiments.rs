use std::path::{Path, PathBuf};

use gestalt_core::experiments::{run, ExperimentConfig, ExperimentKind};

fn config(name: &str) -> ExperimentConfig {
    let p: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&p).unwrap()
}

#[test]
fn binary_cohort_separates() {
    let cfg = config("synthetic_binary.toml");
    assert_eq!(cfg.kind, ExperimentKind::Binary);
    let report = run(&cfg, None).unwrap();
    assert_eq!(report.classes, ["negative", "syndrome-00"]);
    let m = report.binary.clone().expect("binary metrics");
    // 8 positives against 3 x 8 pooled negatives.
    assert_eq!(m.tp + m.fn_, 8);
    assert_eq!(m.tn + m.fp, 24);
    let acc = m.accuracy.unwrap();
    assert!(acc >= 0.95, "binary accuracy {acc} ({m:?})");
    // Binary accuracy is top-1 of the two-class ranked list.
    assert!((report.aggregate_topk(1).unwrap() - acc).abs() < 1e-12);
}

#[test]
fn specialized_subset_scores_and_composites() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("synthetic_specialized.toml");
    let report = run(&cfg, Some(dir.path())).unwrap();
    let subset = &cfg.specialized.as_ref().unwrap().classes;
    assert_eq!(&report.classes, subset);
    assert_eq!(report.counts.test, 25);
    assert_eq!(report.confusion.total(), 25);
    let top1 = report.aggregate_topk(1).unwrap();
    assert!(top1 > 0.6, "specialized top-1 {top1}");
    assert_eq!(report.composites.len(), subset.len());
    for c in &report.composites {
        assert!(dir.path().join(c).exists(), "{c} missing");
    }
    // No label outside the subset reaches a ranked list.
    let preds = std::fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap();
    for rec in gestalt_core::ensemble::parse_predictions(&preds, "run").unwrap() {
        assert!(rec.ranked.iter().all(|e| subset.contains(&e.label)));
    }
}
