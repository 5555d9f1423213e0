//! Single pipeline stages over explicit sample sets, for callers that run
//! pretraining, fine-tuning and prediction separately.

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::pipeline::{labeled, prepare, region_specs, Sample};
use crate::ensemble::{aggregate_available, rank, GestaltScores, PredictionRecord};
use crate::error::{GestaltError, Result};
use crate::gestaltnet::{finetune_region, pretrain_region, EpochMetrics, Phase, RegionModel};
use crate::preproc::{CanonicalTemplate, RegionCrop, RegionSpec};
use crate::rng::{derive_seed, str_id};

fn sorted_labels(samples: &[Sample]) -> Vec<String> {
    let mut l: Vec<String> = samples.iter().map(|s| s.label.clone()).collect();
    l.sort();
    l.dedup();
    l
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| GestaltError::Invariant(format!("thread pool: {e}")))
}

/// Pretrains one model per configured region.
pub fn pretrain_all(
    cfg: &ExperimentConfig,
    train: &[Sample],
    val: &[Sample],
    template: &CanonicalTemplate,
) -> Result<Vec<(RegionModel, Vec<EpochMetrics>)>> {
    let specs = region_specs(cfg);
    let classes = sorted_labels(train);
    let (pt, pv) = (prepare(train, template, &specs), prepare(val, template, &specs));
    pool(cfg)?.install(|| {
        cfg.regions
            .par_iter()
            .enumerate()
            .map(|(slot, region)| {
                let seed = derive_seed(cfg.seed, &[str_id(region.as_str())]);
                let t = labeled(&pt, slot, &classes)?;
                let v = labeled(&pv, slot, &classes)?;
                let (mut m, metrics) = pretrain_region(
                    &cfg.architecture,
                    &t,
                    Some(&v).filter(|v| !v.is_empty()),
                    &cfg.schedule,
                    derive_seed(seed, &[str_id("pretrain")]),
                )?;
                m.template = Some(template.clone());
                Ok((m, metrics))
            })
            .collect()
    })
}

fn model_template(models: &[RegionModel]) -> Result<&CanonicalTemplate> {
    let t = models
        .first()
        .ok_or(GestaltError::EmptyEnsemble)?
        .template
        .as_ref()
        .ok_or_else(|| GestaltError::Checkpoint("model carries no alignment template".into()))?;
    if models.iter().any(|m| m.template.as_ref() != Some(t)) {
        return Err(GestaltError::Checkpoint("region models disagree on the template".into()));
    }
    Ok(t)
}

fn model_specs(models: &[RegionModel]) -> Vec<RegionSpec> {
    models
        .iter()
        .map(|m| RegionSpec {
            side: m.arch().input_side,
            ..RegionSpec::default_for(m.region)
        })
        .collect()
}

/// Fine-tunes every base model on `train`, aligning with the bases' template.
pub fn finetune_all(
    cfg: &ExperimentConfig,
    bases: &[RegionModel],
    train: &[Sample],
    val: &[Sample],
) -> Result<Vec<(RegionModel, Vec<EpochMetrics>)>> {
    let template = model_template(bases)?;
    let specs = model_specs(bases);
    let classes = sorted_labels(train);
    let (pt, pv) = (prepare(train, template, &specs), prepare(val, template, &specs));
    pool(cfg)?.install(|| {
        bases
            .par_iter()
            .enumerate()
            .map(|(slot, base)| {
                let seed = derive_seed(cfg.seed, &[str_id(base.region.as_str())]);
                let t = labeled(&pt, slot, &classes)?;
                let v = labeled(&pv, slot, &classes)?;
                finetune_region(
                    base,
                    &t,
                    Some(&v).filter(|v| !v.is_empty()),
                    &cfg.schedule,
                    cfg.head_init_scale,
                    derive_seed(seed, &[str_id("finetune")]),
                )
            })
            .collect()
    })
}

/// Aligns, crops and scores each sample with every model, averaging the
/// softmax outputs of the regions that produced a crop.
pub fn predict_all(models: &[RegionModel], samples: &[Sample], with_labels: bool) -> Result<Vec<PredictionRecord>> {
    if let Some(m) = models.iter().find(|m| m.phase != Phase::Finetuned) {
        return Err(GestaltError::Phase(format!("{} model is not fine-tuned", m.region)));
    }
    let labels = &models.first().ok_or(GestaltError::EmptyEnsemble)?.labels;
    if models.iter().any(|m| &m.labels != labels) {
        return Err(GestaltError::LabelMismatch);
    }
    let template = model_template(models)?;
    let prepared = prepare(samples, template, &model_specs(models));
    let mut per_model: Vec<Vec<Option<GestaltScores>>> = Vec::with_capacity(models.len());
    for (slot, m) in models.iter().enumerate() {
        let present: Vec<&RegionCrop> = prepared.iter().filter_map(|p| p.crops[slot].as_ref()).collect();
        let mut scored = m.predict_many(&present)?.into_iter();
        per_model.push(prepared.iter().map(|p| p.crops[slot].as_ref().and_then(|_| scored.next())).collect());
    }
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let regions: Vec<Option<GestaltScores>> = per_model.iter().map(|v| v[i].clone()).collect();
        let (agg, used) = match aggregate_available(&regions) {
            Ok(x) => x,
            Err(GestaltError::EmptyEnsemble) => {
                log::warn!("{}: no region crop available, skipped", s.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(PredictionRecord {
            id: s.id.clone(),
            label: with_labels.then(|| s.label.clone()),
            regions: used.iter().map(|&r| models[r].region.to_string()).collect(),
            ranked: rank(&agg).entries,
        });
    }
    Ok(out)
}
