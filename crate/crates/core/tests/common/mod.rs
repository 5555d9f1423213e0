#![allow(dead_code)]

use gestalt_core::dataio::synth::{generate, SynthConfig};
use gestalt_core::experiments::pipeline::{build_sample_template, labeled, prepare, Sample};
use gestalt_core::experiments::{ExperimentConfig, ExperimentKind};
use gestalt_core::gestaltnet::{ArchitectureOptions, LabeledCrops, TrainingSchedule};
use gestalt_core::preproc::{RegionSpec, RegionTag};

pub const SIDE: usize = 32;

pub fn small_arch() -> ArchitectureOptions {
    ArchitectureOptions {
        channels: [4, 4, 8, 8, 8, 8, 16, 16, 16, 16],
        input_side: SIDE,
        ..ArchitectureOptions::default()
    }
}

pub fn samples(cfg: &SynthConfig) -> Vec<Sample> {
    generate(cfg)
        .unwrap()
        .into_iter()
        .map(|s| Sample {
            id: s.id,
            label: s.label,
            image: s.image,
            landmarks: s.landmarks,
        })
        .collect()
}

/// Region crops of `samples`, aligned to a template built from `samples`.
pub fn crops_of(samples: &[Sample], region: RegionTag) -> LabeledCrops {
    let cfg = ExperimentConfig::new(ExperimentKind::Multiclass);
    let template = build_sample_template(samples, &cfg).unwrap();
    let spec = RegionSpec {
        side: SIDE,
        ..RegionSpec::default_for(region)
    };
    let prepared = prepare(samples, &template, &[spec]);
    let mut classes: Vec<String> = samples.iter().map(|s| s.label.clone()).collect();
    classes.sort();
    classes.dedup();
    labeled(&prepared, 0, &classes).unwrap()
}

/// The held-out tail of every class goes to the second set.
pub fn split_tail(samples: Vec<Sample>, per_class: usize, tail: usize) -> (Vec<Sample>, Vec<Sample>) {
    let (mut head, mut rest) = (Vec::new(), Vec::new());
    for (i, s) in samples.into_iter().enumerate() {
        if i % per_class < per_class - tail {
            head.push(s);
        } else {
            rest.push(s);
        }
    }
    (head, rest)
}

pub fn schedule(adam: usize, sgd: usize, finetune: usize) -> TrainingSchedule {
    TrainingSchedule {
        pretrain_adam_epochs: adam,
        pretrain_sgd_epochs: sgd,
        finetune_epochs: finetune,
        batch_size: 16,
        ..TrainingSchedule::default()
    }
}
pub mod grad;
