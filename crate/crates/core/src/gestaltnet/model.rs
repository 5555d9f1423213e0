//! Region expert: a network bound to one facial region and a label list.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::arch::{ArchitectureDescriptor, LayerSpec};
use super::network::{LayerState, Network};
use crate::ensemble::GestaltScores;
use crate::error::{GestaltError, Result};
use crate::nn::checkpoint::FORMAT_VERSION;
use crate::nn::{BatchNormParams, Checkpoint, NamedTensor, Tensor4};
use crate::preproc::annotation::{format_template, parse_template};
use crate::preproc::{CanonicalTemplate, RegionCrop, RegionTag};

/// Crops per inference batch.
const PREDICT_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub region: RegionTag,
    pub net: Network<f32>,
    pub phase: Phase,
    /// Class names in head order.
    pub labels: Vec<String>,
    /// Alignment template the crops were cut against, when known.
    pub template: Option<CanonicalTemplate>,
    /// Seed the weights were trained from.
    pub seed: Option<u64>,
}

pub(crate) fn crops_to_tensor(crops: &[&RegionCrop]) -> Result<Tensor4<f32>> {
    let side = crops.first().map_or(0, |c| c.side());
    let mut data = Vec::with_capacity(crops.len() * side * side);
    for c in crops {
        if c.side() != side {
            return Err(GestaltError::ShapeMismatch("crops of different sizes in one batch".into()));
        }
        data.extend_from_slice(c.pixels.data());
    }
    Tensor4::from_vec([crops.len(), 1, side, side], data)
}

impl RegionModel {
    pub fn arch(&self) -> &ArchitectureDescriptor {
        self.net.arch()
    }

    fn check_predictable(&self, crop: &RegionCrop) -> Result<()> {
        if self.phase != Phase::Finetuned {
            return Err(GestaltError::Phase("prediction needs a fine-tuned model".into()));
        }
        if crop.tag != self.region {
            return Err(GestaltError::RegionMismatch {
                crop: crop.tag.to_string(),
                model: self.region.to_string(),
            });
        }
        Ok(())
    }

    /// Raw head outputs in inference mode, one row per crop.
    pub fn logits(&self, crops: &[&RegionCrop]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(crops.len());
        for chunk in crops.chunks(PREDICT_CHUNK) {
            let y = self.net.forward_infer(&crops_to_tensor(chunk)?)?;
            for i in 0..chunk.len() {
                out.push(y.item(i).iter().map(|&v| v as f64).collect());
            }
        }
        Ok(out)
    }

    /// Per-crop softmax over the model's labels.
    pub fn predict_many(&self, crops: &[&RegionCrop]) -> Result<Vec<GestaltScores>> {
        for c in crops {
            self.check_predictable(c)?;
        }
        self.logits(crops)?
            .iter()
            .map(|l| GestaltScores::from_logits(self.labels.clone(), l))
            .collect()
    }

    /// Metadata and tensors in a byte-stable container.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "format_version": FORMAT_VERSION,
            "kind": "region-model",
            "code_version": env!("CARGO_PKG_VERSION"),
            "region": self.region.as_str(),
            "phase": self.phase,
            "labels": self.labels,
            "architecture": self.net.arch(),
            "template": self.template.as_ref().map(format_template),
            "seed": self.seed,
        });
        let mut tensors = Vec::new();
        for (i, layer) in self.net.layers().iter().enumerate() {
            match layer {
                LayerState::Conv { weight, bias, bn } => {
                    tensors.push(NamedTensor::new(format!("layers.{i}.weight"), weight.shape().to_vec(), weight.data().to_vec()));
                    tensors.push(NamedTensor::new(format!("layers.{i}.bias"), vec![bias.len()], bias.clone()));
                    if let Some(bn) = bn {
                        for (name, v) in [
                            ("gamma", &bn.gamma),
                            ("beta", &bn.beta),
                            ("running_mean", &bn.running_mean),
                            ("running_var", &bn.running_var),
                        ] {
                            tensors.push(NamedTensor::new(format!("layers.{i}.bn.{name}"), vec![v.len()], v.clone()));
                        }
                    }
                }
                LayerState::Dense { weight, bias } => {
                    tensors.push(NamedTensor::new(format!("layers.{i}.weight"), weight.shape().to_vec(), weight.data().to_vec()));
                    tensors.push(NamedTensor::new(format!("layers.{i}.bias"), vec![bias.len()], bias.clone()));
                }
                LayerState::Pool | LayerState::Dropout => {}
            }
        }
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| GestaltError::Checkpoint(m.to_owned());
        let meta = &ckpt.meta;
        if meta.get("kind").and_then(|v| v.as_str()) != Some("region-model") {
            return Err(bad("not a region-model checkpoint"));
        }
        let field = |name: &str| meta.get(name).cloned().ok_or_else(|| bad(&format!("missing meta `{name}`")));
        let de = |name: &str, e: serde_json::Error| GestaltError::Checkpoint(format!("meta `{name}`: {e}"));
        let region: RegionTag = field("region")?
            .as_str()
            .ok_or_else(|| bad("region must be a string"))?
            .parse()?;
        let phase: Phase = serde_json::from_value(field("phase")?).map_err(|e| de("phase", e))?;
        let labels: Vec<String> = serde_json::from_value(field("labels")?).map_err(|e| de("labels", e))?;
        let arch: ArchitectureDescriptor =
            serde_json::from_value(field("architecture")?).map_err(|e| de("architecture", e))?;
        arch.validate()?;
        let template = match meta.get("template").and_then(|v| v.as_str()) {
            Some(t) => Some(parse_template(t, "<checkpoint template>")?),
            None => None,
        };
        let vec1 = |name: String| -> Result<Vec<f32>> { Ok(ckpt.tensor(&name)?.data.clone()) };
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let layer = match spec {
                LayerSpec::Conv { bn_relu, .. } => {
                    let w = ckpt.tensor(&format!("layers.{i}.weight"))?;
                    let shape: [usize; 4] = w.shape.as_slice().try_into().map_err(|_| bad("conv weight must be rank 4"))?;
                    let bn = if *bn_relu {
                        let mut p = BatchNormParams::new(0, arch.bn_momentum as f32, arch.bn_epsilon as f32);
                        p.gamma = vec1(format!("layers.{i}.bn.gamma"))?;
                        p.beta = vec1(format!("layers.{i}.bn.beta"))?;
                        p.running_mean = vec1(format!("layers.{i}.bn.running_mean"))?;
                        p.running_var = vec1(format!("layers.{i}.bn.running_var"))?;
                        Some(p)
                    } else {
                        None
                    };
                    LayerState::Conv {
                        weight: Tensor4::from_vec(shape, w.data.clone())?,
                        bias: vec1(format!("layers.{i}.bias"))?,
                        bn,
                    }
                }
                LayerSpec::Dense { .. } => {
                    let w = ckpt.tensor(&format!("layers.{i}.weight"))?;
                    let shape: [usize; 4] = w.shape.as_slice().try_into().map_err(|_| bad("dense weight must be rank 4"))?;
                    LayerState::Dense {
                        weight: Tensor4::from_vec(shape, w.data.clone())?,
                        bias: vec1(format!("layers.{i}.bias"))?,
                    }
                }
                LayerSpec::Pool { .. } => LayerState::Pool,
                LayerSpec::Dropout { .. } => LayerState::Dropout,
            };
            layers.push(layer);
        }
        let net = Network::from_parts(arch, layers)?;
        if labels.len() != net.head_width() {
            return Err(bad("label count differs from head width"));
        }
        if phase == Phase::Finetuned && labels.is_empty() {
            return Err(bad("fine-tuned model without labels"));
        }
        Ok(Self {
            region,
            net,
            phase,
            labels,
            template,
            seed: meta.get("seed").and_then(|v| v.as_u64()),
        })
    }
}

/// Softmax scores for one crop.
pub fn predict_region(model: &RegionModel, crop: &RegionCrop) -> Result<GestaltScores> {
    Ok(model.predict_many(&[crop])?.remove(0))
}
