//! Two-phase training: identity pretraining, then fine-tuning with a fresh
//! head on the target classes.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::{ArchitectureDescriptor, ArchitectureOptions};
use super::model::{crops_to_tensor, Phase, RegionModel};
use super::network::Network;
use crate::dataio::augment::{augment_with, AugmentationPolicy};
use crate::ensemble::rank_indices;
use crate::error::{GestaltError, Result};
use crate::nn::init::FINETUNE_HEAD_SCALE;
use crate::nn::{batch_softmax_cross_entropy, OptimizerKind, OptimizerState, Tensor4};
use crate::preproc::{RegionCrop, RegionTag};
use crate::rng::{derive_seed, str_id, stream};

/// Epoch counts, learning rates and batching for both phases. Epoch counts
/// are multiplied by `scale_factor` (rounded, at least 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub pretrain_adam_epochs: usize,
    pub pretrain_adam_lr: f64,
    pub pretrain_sgd_epochs: usize,
    pub pretrain_sgd_lr: f64,
    pub pretrain_sgd_momentum: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_momentum: f64,
    pub batch_size: usize,
    pub scale_factor: f64,
    pub augmentation: AugmentationPolicy,
    /// Per-class loss weights in head order; empty means unweighted.
    pub class_weights: Vec<f64>,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            pretrain_adam_epochs: 40,
            pretrain_adam_lr: 1e-3,
            pretrain_sgd_epochs: 10,
            pretrain_sgd_lr: 1e-4,
            pretrain_sgd_momentum: 0.9,
            finetune_epochs: 500,
            finetune_lr: 5e-3,
            finetune_momentum: 0.9,
            batch_size: 64,
            scale_factor: 1.0,
            augmentation: AugmentationPolicy::default(),
            class_weights: Vec::new(),
        }
    }
}

impl TrainingSchedule {
    pub fn scaled(&self, epochs: usize) -> usize {
        ((epochs as f64 * self.scale_factor).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GestaltError::Config(m.to_owned()));
        if self.pretrain_adam_epochs + self.pretrain_sgd_epochs == 0 || self.finetune_epochs == 0 {
            return bad("epoch counts must be >= 1");
        }
        let lrs = [self.pretrain_adam_lr, self.pretrain_sgd_lr, self.finetune_lr];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return bad("learning rates must be > 0");
        }
        let moms = [self.pretrain_sgd_momentum, self.finetune_momentum];
        if moms.iter().any(|m| !(0.0..1.0).contains(m)) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size < 2 {
            return bad("batch size must be >= 2 for batch normalization");
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return bad("scale factor must be > 0");
        }
        self.augmentation.validate()
    }

    /// `(optimizer, epochs)` stages of a phase, after scaling.
    pub fn stages(&self, phase: Phase) -> Vec<(OptimizerKind, usize)> {
        match phase {
            Phase::Pretrained => {
                let mut out = Vec::new();
                if self.pretrain_adam_epochs > 0 {
                    out.push((OptimizerKind::adam(self.pretrain_adam_lr), self.scaled(self.pretrain_adam_epochs)));
                }
                if self.pretrain_sgd_epochs > 0 {
                    out.push((
                        OptimizerKind::sgd(self.pretrain_sgd_lr, self.pretrain_sgd_momentum),
                        self.scaled(self.pretrain_sgd_epochs),
                    ));
                }
                out
            }
            Phase::Finetuned => vec![(
                OptimizerKind::sgd(self.finetune_lr, self.finetune_momentum),
                self.scaled(self.finetune_epochs),
            )],
        }
    }
}

/// Crops of one region with integer labels into `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCrops {
    pub crops: Vec<RegionCrop>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl LabeledCrops {
    pub fn new(crops: Vec<RegionCrop>, labels: Vec<usize>, classes: Vec<String>) -> Result<Self> {
        if crops.len() != labels.len() {
            return Err(GestaltError::LengthMismatch {
                left: crops.len(),
                right: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(GestaltError::InvalidLabel {
                label: l,
                classes: classes.len(),
            });
        }
        Ok(Self { crops, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    /// The single region tag shared by all crops.
    pub fn region(&self) -> Result<RegionTag> {
        let first = self
            .crops
            .first()
            .ok_or_else(|| GestaltError::InvalidArgument("no training crops".into()))?
            .tag;
        if let Some(c) = self.crops.iter().find(|c| c.tag != first) {
            return Err(GestaltError::RegionMismatch {
                crop: c.tag.to_string(),
                model: first.to_string(),
            });
        }
        Ok(first)
    }

    fn distinct_classes(&self) -> usize {
        let mut seen = vec![false; self.classes.len()];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub region: String,
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    /// Over train-mode forward passes of augmented crops.
    pub train_top1: f64,
    pub val_top1: Option<f64>,
}

pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| GestaltError::io(path, e))?;
    for m in metrics {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(f, "{line}").map_err(|e| GestaltError::io(path, e))?;
    }
    Ok(())
}

/// One optimizer step on a batch. Returns the mean loss and the number of
/// correct train-mode argmax predictions.
pub fn train_step(
    net: &mut Network<f32>,
    opt: &mut OptimizerState<f32>,
    batch: &Tensor4<f32>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
    dropout_seed: u64,
) -> Result<(f64, usize)> {
    if batch.batch() < 2 {
        return Err(GestaltError::DegenerateBatch(batch.batch()));
    }
    let (logits, trace) = net.forward_train(batch, &mut stream(dropout_seed, &[]))?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row: Vec<f64> = logits.item(i).iter().map(|&v| v as f64).collect();
            rank_indices(&row)[0] == l
        })
        .count();
    let (loss, grad) = batch_softmax_cross_entropy(&logits, labels, class_weights)?;
    if !loss.is_finite() {
        return Err(GestaltError::Invariant(format!("non-finite training loss {loss}")));
    }
    let (grads, _) = net.backward(trace, &grad)?;
    let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
    opt.step(&mut net.params_mut(), &grad_refs)?;
    Ok((loss as f64, correct))
}

/// Splits a shuffled index list into batches of `size`; a trailing batch of
/// one joins the previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Inference top-1 over a labeled set.
pub fn top1_accuracy(model: &RegionModel, data: &LabeledCrops) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&RegionCrop> = data.crops.iter().collect();
    let logits = model.logits(&refs)?;
    let hits = logits
        .iter()
        .zip(&data.labels)
        .filter(|(l, &y)| rank_indices(l)[0] == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

fn phase_name(phase: Phase, opt: &OptimizerKind) -> &'static str {
    match (phase, opt) {
        (Phase::Pretrained, OptimizerKind::Adam { .. }) => "pretrain-adam",
        (Phase::Pretrained, _) => "pretrain-sgd",
        (Phase::Finetuned, _) => "finetune",
    }
}

fn run_phase(
    model: &mut RegionModel,
    train: &LabeledCrops,
    val: Option<&LabeledCrops>,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<Vec<EpochMetrics>> {
    let weights = (!schedule.class_weights.is_empty()).then_some(schedule.class_weights.as_slice());
    if let Some(w) = weights {
        if w.len() != train.classes.len() {
            return Err(GestaltError::Config("class weight count differs from class count".into()));
        }
    }
    if train.len() < 2 {
        return Err(GestaltError::DegenerateBatch(train.len()));
    }
    let phase_tag = str_id(phase_name_key(model.phase));
    let mut metrics = Vec::new();
    let mut epoch = 0usize;
    for (stage, (kind, epochs)) in schedule.stages(model.phase).into_iter().enumerate() {
        let mut opt = OptimizerState::new(kind, &model.net.param_sizes());
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut stream(seed, &[phase_tag, epoch as u64, str_id("shuffle")]));
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for (b, idx) in batches(&order, schedule.batch_size).into_iter().enumerate() {
                let augmented: Vec<RegionCrop> = idx
                    .iter()
                    .map(|&i| {
                        let mut rng = stream(seed, &[phase_tag, epoch as u64, str_id("augment"), i as u64]);
                        augment_with(&train.crops[i], &schedule.augmentation, &mut rng)
                    })
                    .collect();
                let refs: Vec<&RegionCrop> = augmented.iter().collect();
                let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
                let dropout_seed = derive_seed(seed, &[phase_tag, epoch as u64, str_id("dropout"), b as u64]);
                let (loss, hits) = train_step(
                    &mut model.net,
                    &mut opt,
                    &crops_to_tensor(&refs)?,
                    &labels,
                    weights,
                    dropout_seed,
                )?;
                loss_sum += loss * idx.len() as f64;
                correct += hits;
            }
            let val_top1 = match val {
                Some(v) if !v.is_empty() => Some(top1_accuracy(model, v)?),
                _ => None,
            };
            let m = EpochMetrics {
                region: model.region.to_string(),
                phase: phase_name(model.phase, &kind).to_owned(),
                epoch,
                train_loss: loss_sum / train.len() as f64,
                train_top1: correct as f64 / train.len() as f64,
                val_top1,
            };
            log::debug!(
                "{} {} stage {stage} epoch {epoch}: loss {:.4} train {:.3} val {:?}",
                m.region,
                m.phase,
                m.train_loss,
                m.train_top1,
                m.val_top1
            );
            metrics.push(m);
            epoch += 1;
        }
    }
    Ok(metrics)
}

fn phase_name_key(phase: Phase) -> &'static str {
    match phase {
        Phase::Pretrained => "pretrain",
        Phase::Finetuned => "finetune",
    }
}

fn check_val(train: &LabeledCrops, val: Option<&LabeledCrops>, region: RegionTag) -> Result<()> {
    if let Some(v) = val {
        if v.classes != train.classes {
            return Err(GestaltError::LabelMismatch);
        }
        if !v.is_empty() && v.region()? != region {
            return Err(GestaltError::RegionMismatch {
                crop: v.region()?.to_string(),
                model: region.to_string(),
            });
        }
    }
    Ok(())
}

/// Trains a freshly initialized network on an identity-labeled set.
pub fn pretrain_region(
    options: &ArchitectureOptions,
    train: &LabeledCrops,
    val: Option<&LabeledCrops>,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<(RegionModel, Vec<EpochMetrics>)> {
    schedule.validate()?;
    let got = train.distinct_classes();
    if got < 2 {
        return Err(GestaltError::InsufficientClasses { needed: 2, got });
    }
    let region = train.region()?;
    check_val(train, val, region)?;
    let arch = ArchitectureDescriptor::gestalt(options, train.classes.len())?;
    let net = Network::new(arch, derive_seed(seed, &[str_id("init")]))?;
    let mut model = RegionModel {
        region,
        net,
        phase: Phase::Pretrained,
        labels: train.classes.clone(),
        template: None,
        seed: Some(seed),
    };
    let metrics = run_phase(&mut model, train, val, schedule, seed)?;
    Ok((model, metrics))
}

/// Copies `base`, replacing its head with one sized to `train.classes`
/// (Xavier-modified init at `head_init_scale`, zero bias). Every other tensor
/// is kept bit-for-bit.
pub fn transfer(base: &RegionModel, classes: &[String], head_init_scale: f64, seed: u64) -> Result<RegionModel> {
    if base.phase != Phase::Pretrained {
        return Err(GestaltError::Phase("fine-tuning needs a pretrained base".into()));
    }
    if classes.len() < 2 {
        return Err(GestaltError::InsufficientClasses {
            needed: 2,
            got: classes.len(),
        });
    }
    let mut net = base.net.clone();
    net.replace_head(classes.len(), head_init_scale, derive_seed(seed, &[str_id("head")]))?;
    Ok(RegionModel {
        region: base.region,
        net,
        phase: Phase::Finetuned,
        labels: classes.to_vec(),
        template: base.template.clone(),
        seed: Some(seed),
    })
}

pub fn finetune_region(
    base: &RegionModel,
    train: &LabeledCrops,
    val: Option<&LabeledCrops>,
    schedule: &TrainingSchedule,
    head_init_scale: f64,
    seed: u64,
) -> Result<(RegionModel, Vec<EpochMetrics>)> {
    schedule.validate()?;
    if base.phase != Phase::Pretrained {
        return Err(GestaltError::Phase("fine-tuning needs a pretrained base".into()));
    }
    let got = train.distinct_classes();
    if got < 2 {
        return Err(GestaltError::InsufficientClasses { needed: 2, got });
    }
    let region = train.region()?;
    if region != base.region {
        return Err(GestaltError::RegionMismatch {
            crop: region.to_string(),
            model: base.region.to_string(),
        });
    }
    check_val(train, val, region)?;
    let mut model = transfer(base, &train.classes, head_init_scale, seed)?;
    let metrics = run_phase(&mut model, train, val, schedule, seed)?;
    Ok((model, metrics))
}

/// [`finetune_region`] with the default head scale.
pub fn finetune_default(
    base: &RegionModel,
    train: &LabeledCrops,
    val: Option<&LabeledCrops>,
    schedule: &TrainingSchedule,
    seed: u64,
) -> Result<(RegionModel, Vec<EpochMetrics>)> {
    finetune_region(base, train, val, schedule, FINETUNE_HEAD_SCALE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_scaling() {
        let s = TrainingSchedule {
            scale_factor: 0.1,
            ..Default::default()
        };
        let stages = s.stages(Phase::Pretrained);
        assert_eq!(stages.iter().map(|s| s.1).collect::<Vec<_>>(), [4, 1]);
        assert_eq!(s.stages(Phase::Finetuned)[0].1, 50);
        let tiny = TrainingSchedule {
            scale_factor: 1e-6,
            ..Default::default()
        };
        assert_eq!(tiny.scaled(500), 1);
    }

    #[test]
    fn full_scale_defaults() {
        let s = TrainingSchedule::default();
        let pre = s.stages(Phase::Pretrained);
        assert_eq!(pre[0], (OptimizerKind::adam(1e-3), 40));
        assert_eq!(pre[1], (OptimizerKind::sgd(1e-4, 0.9), 10));
        assert_eq!(s.stages(Phase::Finetuned), [(OptimizerKind::sgd(5e-3, 0.9), 500)]);
        assert_eq!(s.batch_size, 64);
    }

    #[test]
    fn invalid_schedules() {
        for s in [
            TrainingSchedule { finetune_lr: 0.0, ..Default::default() },
            TrainingSchedule { batch_size: 1, ..Default::default() },
            TrainingSchedule { finetune_epochs: 0, ..Default::default() },
        ] {
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), [4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
    }
}
