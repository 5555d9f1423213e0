//! Shared steps: loading samples, alignment, cropping and per-region jobs.

use std::path::Path;

use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, PretrainSource};
use crate::dataio::synth::{generate, SynthConfig};
use crate::dataio::{deduplicate_and_exclude, load_samples, split_dataset, stratified_split, Dataset, Removal, Split};
use crate::ensemble::GestaltScores;
use crate::error::{GestaltError, Result};
use crate::gestaltnet::{finetune_region, pretrain_region, EpochMetrics, LabeledCrops, RegionModel};
use crate::nn::Checkpoint;
use crate::preproc::{build_template, preprocess, CanonicalTemplate, LandmarkSet, RegionCrop, RegionSpec, RegionTag};
use crate::raster::Image;
use crate::rng::{derive_seed, str_id};

/// A labeled image with its landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub image: Image,
    pub landmarks: LandmarkSet,
}

/// A sample after alignment: one optional crop per configured region (a
/// region whose box degenerates is `None`) and the aligned image.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub label: String,
    pub aligned: Option<(Image, LandmarkSet)>,
    pub crops: Vec<Option<RegionCrop>>,
}

#[derive(Debug, Clone, Default)]
pub struct Cohorts {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Sorted class names over all parts.
    pub classes: Vec<String>,
    pub removals: Vec<Removal>,
    pub excluded: Vec<String>,
}

fn synth_samples(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    Ok(generate(cfg)?
        .into_iter()
        .map(|s| Sample {
            id: s.id,
            label: s.label,
            image: s.image,
            landmarks: s.landmarks,
        })
        .collect())
}

fn manifest_samples(dataset: &Dataset, min_side: usize) -> Result<(Vec<(Sample, Option<Split>)>, Vec<String>)> {
    let (loaded, excluded) = load_samples(dataset, min_side)?;
    let samples = loaded
        .into_iter()
        .map(|l| {
            let split = l.record.split;
            (
                Sample {
                    id: l.record.id,
                    label: l.record.label,
                    image: l.image.to_grayscale(),
                    landmarks: l.landmarks,
                },
                split,
            )
        })
        .collect();
    Ok((samples, excluded))
}

fn take_indices<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Splits training samples stratified by label.
pub fn split_train_val(samples: Vec<Sample>, fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if fraction >= 1.0 {
        return Ok((samples, Vec::new()));
    }
    let labels: Vec<&str> = samples.iter().map(|s| s.label.as_str()).collect();
    let (t, v) = stratified_split(&labels, fraction, seed)?;
    Ok((take_indices(&samples, &t), take_indices(&samples, &v)))
}

/// Train/val/test samples for the configured data source, with the test set
/// deduplicated against training by decoded pixel content.
pub fn load_cohorts(cfg: &ExperimentConfig) -> Result<Cohorts> {
    let split_seed = derive_seed(cfg.seed, &[str_id("split")]);
    let (train_all, val_given, test, excluded) = match &cfg.data {
        DataSource::Synthetic { synth, test_per_class } => {
            let all = synth_samples(synth)?;
            let cut = synth.per_class - test_per_class;
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, s) in all.into_iter().enumerate() {
                if i % synth.per_class < cut {
                    train.push(s);
                } else {
                    test.push(s);
                }
            }
            (train, None, test, Vec::new())
        }
        DataSource::Manifest { manifest } => {
            let ds = Dataset::load(manifest)?;
            let (samples, excluded) = manifest_samples(&ds, cfg.min_side)?;
            let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for (s, split) in samples {
                match split {
                    Some(Split::Test) => test.push(s),
                    Some(Split::Val) => val.push(s),
                    _ => train.push(s),
                }
            }
            let val = (!val.is_empty()).then_some(val);
            (train, val, test, excluded)
        }
    };
    let (train, val) = match val_given {
        Some(v) => (train_all, v),
        None => split_train_val(train_all, cfg.train_fraction, split_seed)?,
    };
    let hashes = |s: &[Sample]| -> Vec<(String, [u8; 32])> {
        s.iter().map(|x| (x.id.clone(), x.image.to_grayscale().content_hash())).collect()
    };
    let mut reference = hashes(&train);
    reference.extend(hashes(&val));
    let (kept, removals) = deduplicate_and_exclude(&hashes(&test), &reference);
    for r in &removals {
        log::info!("test sample {} removed: {:?}", r.id, r.reason);
    }
    let test = take_indices(&test, &kept);
    let mut classes: Vec<String> = train.iter().chain(&val).chain(&test).map(|s| s.label.clone()).collect();
    classes.sort();
    classes.dedup();
    Ok(Cohorts {
        train,
        val,
        test,
        classes,
        removals,
        excluded,
    })
}

/// Identity-labeled samples for pretraining, split into train and val.
pub fn load_pretrain(cfg: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = match &cfg.pretrain {
        PretrainSource::Synthetic { synth } => synth_samples(synth)?,
        PretrainSource::Manifest { manifest } => {
            let ds = Dataset::load(manifest)?;
            let (train, val) = split_dataset(&ds, cfg.train_fraction.min(0.9), derive_seed(cfg.seed, &[str_id("pretrain-split")]))?;
            let (t, _) = manifest_samples(&train, cfg.min_side)?;
            let (v, _) = manifest_samples(&val, cfg.min_side)?;
            return Ok((t.into_iter().map(|x| x.0).collect(), v.into_iter().map(|x| x.0).collect()));
        }
    };
    split_train_val(samples, cfg.train_fraction.min(0.9), derive_seed(cfg.seed, &[str_id("pretrain-split")]))
}

pub fn region_specs(cfg: &ExperimentConfig) -> Vec<RegionSpec> {
    cfg.regions
        .iter()
        .map(|&t| RegionSpec {
            side: cfg.architecture.input_side,
            ..RegionSpec::default_for(t)
        })
        .collect()
}

pub fn build_sample_template(samples: &[Sample], cfg: &ExperimentConfig) -> Result<CanonicalTemplate> {
    let sets: Vec<LandmarkSet> = samples.iter().map(|s| s.landmarks.clone()).collect();
    build_template(&sets, cfg.template.width, cfg.template.height, cfg.template.fill)
}

/// Aligns each sample and cuts every region. Degenerate boxes leave that
/// region empty; a failed alignment leaves all regions empty.
pub fn prepare(samples: &[Sample], template: &CanonicalTemplate, specs: &[RegionSpec]) -> Vec<Prepared> {
    samples
        .iter()
        .map(|s| {
            let all = preprocess(&s.image, &s.landmarks, template, &[]);
            let (aligned, crops) = match all {
                Ok(p) => {
                    let crops = specs
                        .iter()
                        .map(|spec| {
                            crate::preproc::generate_region(&p.aligned, &p.aligned_landmarks, spec)
                                .map_err(|e| log::info!("{}: no {} crop: {e}", s.id, spec.tag))
                                .ok()
                        })
                        .collect();
                    (Some((p.aligned, p.aligned_landmarks)), crops)
                }
                Err(e) => {
                    log::info!("{}: alignment failed: {e}", s.id);
                    (None, vec![None; specs.len()])
                }
            };
            Prepared {
                id: s.id.clone(),
                label: s.label.clone(),
                aligned,
                crops,
            }
        })
        .collect()
}

/// Crops of region slot `r`, labeled by position in `classes`. Samples
/// without that crop, or with a label outside `classes`, are skipped.
pub fn labeled(prepared: &[Prepared], r: usize, classes: &[String]) -> Result<LabeledCrops> {
    let (mut crops, mut labels) = (Vec::new(), Vec::new());
    for p in prepared {
        if let (Some(c), Some(l)) = (&p.crops[r], classes.iter().position(|c| *c == p.label)) {
            crops.push(c.clone());
            labels.push(l);
        }
    }
    LabeledCrops::new(crops, labels, classes.to_vec())
}

/// Output of one region's pretrain + finetune + predict job.
pub struct RegionRun {
    pub region: RegionTag,
    pub pretrained: RegionModel,
    pub finetuned: RegionModel,
    pub metrics: Vec<EpochMetrics>,
    /// One entry per test sample; `None` where the crop is missing.
    pub test_scores: Vec<Option<GestaltScores>>,
}

pub struct RegionJob<'a> {
    pub slot: usize,
    pub region: RegionTag,
    pub pretrain_train: &'a [Prepared],
    pub pretrain_val: &'a [Prepared],
    pub identities: &'a [String],
    pub train: &'a [Prepared],
    pub val: &'a [Prepared],
    pub test: &'a [Prepared],
    pub classes: &'a [String],
    pub template: &'a CanonicalTemplate,
}

pub fn run_region(job: &RegionJob<'_>, cfg: &ExperimentConfig) -> Result<RegionRun> {
    let seed = derive_seed(cfg.seed, &[str_id(job.region.as_str())]);
    let pre_train = labeled(job.pretrain_train, job.slot, job.identities)?;
    let pre_val = labeled(job.pretrain_val, job.slot, job.identities)?;
    let (mut pretrained, mut metrics) = pretrain_region(
        &cfg.architecture,
        &pre_train,
        Some(&pre_val).filter(|v| !v.is_empty()),
        &cfg.schedule,
        derive_seed(seed, &[str_id("pretrain")]),
    )?;
    pretrained.template = Some(job.template.clone());
    let train = labeled(job.train, job.slot, job.classes)?;
    let val = labeled(job.val, job.slot, job.classes)?;
    let (finetuned, ft_metrics) = finetune_region(
        &pretrained,
        &train,
        Some(&val).filter(|v| !v.is_empty()),
        &cfg.schedule,
        cfg.head_init_scale,
        derive_seed(seed, &[str_id("finetune")]),
    )?;
    metrics.extend(ft_metrics);
    let present: Vec<&RegionCrop> = job.test.iter().filter_map(|p| p.crops[job.slot].as_ref()).collect();
    let mut scored = finetuned.predict_many(&present)?.into_iter();
    let test_scores = job
        .test
        .iter()
        .map(|p| p.crops[job.slot].as_ref().and_then(|_| scored.next()))
        .collect();
    Ok(RegionRun {
        region: job.region,
        pretrained,
        finetuned,
        metrics,
        test_scores,
    })
}

/// Runs region jobs on `cfg.workers` threads; results keep job order.
pub fn run_regions(jobs: &[RegionJob<'_>], cfg: &ExperimentConfig) -> Result<Vec<RegionRun>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| GestaltError::Invariant(format!("thread pool: {e}")))?;
    pool.install(|| jobs.par_iter().map(|j| run_region(j, cfg)).collect())
}

pub fn write_checkpoint(model: &RegionModel, path: &Path) -> Result<()> {
    let bytes = model.to_checkpoint().encode()?;
    std::fs::write(path, bytes).map_err(|e| GestaltError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<RegionModel> {
    let bytes = std::fs::read(path).map_err(|e| GestaltError::io(path, e))?;
    RegionModel::from_checkpoint(&Checkpoint::decode(&bytes)?)
}
