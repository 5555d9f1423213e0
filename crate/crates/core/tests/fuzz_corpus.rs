//! Every checked-in fuzz seed must be accepted by its parser, so the corpora
//! start from valid inputs.

use std::path::{Path, PathBuf};

use gestalt_core::dataio::Dataset;
use gestalt_core::ensemble::parse_predictions;
use gestalt_core::experiments::ExperimentConfig;
use gestalt_core::gestaltnet::RegionModel;
use gestalt_core::nn::Checkpoint;
use gestalt_core::preproc::annotation::{parse_annotations, parse_template};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds in {}", dir.display());
    v
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn manifest_seeds_parse() {
    for p in seeds("manifest") {
        Dataset::parse(&text(&p), "/data".into(), "seed").unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn annotation_seeds_parse() {
    for p in seeds("annotations") {
        assert!(!parse_annotations(&text(&p), "seed").unwrap().is_empty());
    }
}

#[test]
fn template_seeds_parse() {
    for p in seeds("template") {
        parse_template(&text(&p), "seed").unwrap();
    }
}

#[test]
fn checkpoint_seeds_decode() {
    for p in seeds("checkpoint") {
        let ckpt = Checkpoint::decode(&std::fs::read(&p).unwrap()).unwrap();
        RegionModel::from_checkpoint(&ckpt).unwrap();
    }
}

#[test]
fn config_seeds_parse() {
    for p in seeds("experiment_config") {
        ExperimentConfig::parse(&text(&p), Path::new("/")).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn prediction_seeds_parse() {
    for p in seeds("predictions") {
        parse_predictions(&text(&p), "seed").unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}
