//! Experiment configuration, read from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section has defaults; a minimal file needs only `kind`.
//!
//! ```toml
//! kind = "multiclass"        # binary | specialized | multiclass
//! seed = 7
//!
//! [data]
//! source = "synthetic"       # or "manifest" with `manifest = "path.tsv"`
//! test_per_class = 10
//! [data.synth]
//! classes = 8
//! per_class = 35
//!
//! [pretrain]
//! source = "synthetic"
//! [pretrain.synth]
//! classes = 10
//! per_class = 20
//!
//! [schedule]
//! scale_factor = 0.05
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::synth::{SynthConfig, SynthKind};
use crate::ensemble::AggregationRule;
use crate::error::{GestaltError, Result};
use crate::evaluation::{DEFAULT_DRAWS, DEFAULT_KS};
use crate::gestaltnet::{ArchitectureOptions, TrainingSchedule};
use crate::nn::init::FINETUNE_HEAD_SCALE;
use crate::preproc::RegionTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Binary,
    Specialized,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Generated classes; the last `test_per_class` samples of each class are
    /// held out.
    Synthetic {
        #[serde(default)]
        synth: SynthConfig,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
    },
    /// A manifest whose `split` column marks test records; records without a
    /// split, or marked `train`, train; `val` records validate.
    Manifest { manifest: PathBuf },
}

fn default_test_per_class() -> usize {
    10
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            synth: SynthConfig::default(),
            test_per_class: default_test_per_class(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum PretrainSource {
    Synthetic {
        #[serde(default = "default_identities")]
        synth: SynthConfig,
    },
    /// Identity-labeled manifest; every record is used.
    Manifest { manifest: PathBuf },
}

fn default_identities() -> SynthConfig {
    SynthConfig::identities(10, 20, 1)
}

impl Default for PretrainSource {
    fn default() -> Self {
        PretrainSource::Synthetic {
            synth: default_identities(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarySpec {
    /// Label forming the positive cohort.
    pub positive: String,
    /// Labels forming the negative cohort; empty means every other label.
    #[serde(default)]
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Train on every class, then restrict scores to the subset and
    /// renormalize.
    #[default]
    Restrict,
    /// Train a head over the subset classes only.
    SubsetHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecializedSpec {
    pub classes: Vec<String>,
    #[serde(default = "default_held_out")]
    pub held_out_per_class: usize,
    #[serde(default)]
    pub truncation: Truncation,
}

fn default_held_out() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateOptions {
    pub width: usize,
    pub height: usize,
    /// Fraction of the frame the landmark bounding box spans.
    pub fill: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            fill: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_regions")]
    pub regions: Vec<RegionTag>,
    /// Threads for region jobs; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub aggregation: AggregationRule,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_draws")]
    pub permutation_draws: usize,
    #[serde(default = "default_head_scale")]
    pub head_init_scale: f64,
    /// Images whose shorter side is below this are excluded.
    #[serde(default = "default_min_side")]
    pub min_side: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub template: TemplateOptions,
    #[serde(default)]
    pub architecture: ArchitectureOptions,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    #[serde(default)]
    pub pretrain: PretrainSource,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub binary: Option<BinarySpec>,
    #[serde(default)]
    pub specialized: Option<SpecializedSpec>,
}

fn default_regions() -> Vec<RegionTag> {
    RegionTag::ALL.to_vec()
}

fn default_ks() -> Vec<usize> {
    DEFAULT_KS.to_vec()
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_head_scale() -> f64 {
    FINETUNE_HEAD_SCALE
}

fn default_min_side() -> usize {
    100
}

fn default_train_fraction() -> f64 {
    0.9
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self::parse(&format!("kind = \"{}\"", kind_name(kind)), Path::new(".")).expect("minimal config parses")
    }

    /// Parses TOML text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| GestaltError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GestaltError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Manifest { manifest } = &mut self.data {
            fix(manifest);
        }
        if let PretrainSource::Manifest { manifest } = &mut self.pretrain {
            fix(manifest);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GestaltError::Config(m));
        if self.regions.is_empty() {
            return bad("at least one region is required".into());
        }
        let mut seen = self.regions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.regions.len() {
            return bad("regions listed twice".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be non-empty and >= 1".into());
        }
        if self.permutation_draws == 0 {
            return bad("permutation_draws must be >= 1".into());
        }
        if !(self.head_init_scale.is_finite() && self.head_init_scale >= 0.0) {
            return bad("head_init_scale must be >= 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must lie in (0, 1]".into());
        }
        let t = &self.template;
        if t.width == 0 || t.height == 0 || !(t.fill > 0.0 && t.fill <= 1.0) {
            return bad("template frame must be non-empty with fill in (0, 1]".into());
        }
        self.schedule.validate()?;
        if let DataSource::Synthetic { synth, test_per_class } = &self.data {
            synth.validate()?;
            if synth.kind != SynthKind::Syndrome {
                return bad("data.synth must describe syndrome classes".into());
            }
            if *test_per_class >= synth.per_class {
                return bad("test_per_class must leave training samples".into());
            }
        }
        if let PretrainSource::Synthetic { synth } = &self.pretrain {
            synth.validate()?;
        }
        match self.kind {
            ExperimentKind::Binary if self.binary.is_none() => bad("binary experiments need a [binary] section".into()),
            ExperimentKind::Specialized => match &self.specialized {
                None => bad("specialized experiments need a [specialized] section".into()),
                Some(s) if s.held_out_per_class == 0 => bad("held_out_per_class must be >= 1".into()),
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

pub fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Binary => "binary",
        ExperimentKind::Specialized => "specialized",
        ExperimentKind::Multiclass => "multiclass",
    }
}
