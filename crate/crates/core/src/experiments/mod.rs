//! Binary, specialized and multi-class experiment drivers.
//!
//! Run directory layout when an output directory is given:
//!
//! ```text
//! config.toml                    resolved configuration
//! template.tsv                   alignment template
//! checkpoints/<region>-{pretrained,finetuned}.ckpt
//! metrics/<region>.jsonl         per-epoch training metrics
//! predictions.jsonl              ranked lists for the test set
//! report.json                    EvalReport
//! tables.txt                     per-region and top-K tables
//! plots/confusion.png, plots/accuracy.png
//! composites/<class>.png         specialized runs only
//! ```

pub mod config;
pub mod phases;
pub mod pipeline;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{BinarySpec, DataSource, ExperimentConfig, ExperimentKind, PretrainSource, SpecializedSpec, Truncation};
use pipeline::{build_sample_template, load_cohorts, load_pretrain, prepare, region_specs, write_checkpoint, RegionJob, Sample};

use crate::dataio::RemovalReason;
use crate::ensemble::{aggregate_available, aggregate_logits, rank, AggregationRule, GestaltScores, PredictionRecord, RankedList};
use crate::error::{GestaltError, Result};
use crate::evaluation::plot::{accuracy_bars, confusion_heatmap};
use crate::evaluation::{
    binary_metrics, check_ranked, composite_photo, confusion_matrix, permutation_test, topk_table, BinaryMetrics,
    ConfusionMatrix, PermutationStats, TopK,
};
use crate::gestaltnet::write_metrics;
use crate::preproc::annotation::format_template;
use crate::preproc::{generate_region, RegionCrop, RegionSpec, RegionTag};
use crate::raster::Image;
use crate::rng::{derive_seed, str_id};

/// Label given to the pooled negative cohort of a binary experiment.
pub const NEGATIVE_LABEL: &str = "negative";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub pretrain_train: usize,
    pub pretrain_val: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedSample {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionTag,
    pub name: String,
    /// Test samples that had this crop.
    pub evaluated: usize,
    pub topk: Vec<TopK>,
    pub final_train_loss: f64,
    pub final_val_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rule: AggregationRule,
    pub topk: Vec<TopK>,
    pub permutation: Vec<PermutationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub code_version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub classes: Vec<String>,
    pub counts: SampleCounts,
    pub removed: Vec<RemovedSample>,
    pub excluded: Vec<String>,
    pub regions: Vec<RegionReport>,
    pub aggregate: AggregateReport,
    pub confusion: ConfusionMatrix,
    pub binary: Option<BinaryMetrics>,
    pub composites: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn aggregate_topk(&self, k: usize) -> Option<f64> {
        self.aggregate.topk.iter().find(|t| t.k == k).map(|t| t.accuracy)
    }

    pub fn region_topk(&self, region: RegionTag, k: usize) -> Option<f64> {
        self.regions
            .iter()
            .find(|r| r.region == region)
            .and_then(|r| r.topk.iter().find(|t| t.k == k))
            .map(|t| t.accuracy)
    }

    /// Per-region top-5 (or the largest configured K below it) and the
    /// aggregate, one row each; then the aggregate top-K with permutation
    /// statistics.
    pub fn tables(&self) -> String {
        let k = self.aggregate.topk.iter().map(|t| t.k).filter(|&k| k <= 5).max().unwrap_or(1);
        let mut out = format!("{:<24}top-{k} accuracy\n", "Model");
        for r in &self.regions {
            let v = r.topk.iter().find(|t| t.k == k).map_or(f64::NAN, |t| t.accuracy);
            out += &format!("{:<24}{:.2}\n", r.name, 100.0 * v);
        }
        out += &format!("{:<24}{:.2}\n\n", "Aggregated model", 100.0 * self.aggregate_topk(k).unwrap_or(f64::NAN));
        out += &format!("{:<8}{:>10}{:>12}{:>10}{:>12}\n", "K", "accuracy", "perm mean", "perm sd", "p-value");
        for (t, p) in self.aggregate.topk.iter().zip(&self.aggregate.permutation) {
            out += &format!(
                "{:<8}{:>10.2}{:>12.2}{:>10.2}{:>12.3e}\n",
                t.k,
                100.0 * t.accuracy,
                100.0 * p.mean,
                100.0 * p.sd,
                p.p_value
            );
        }
        out
    }
}

fn relabel(samples: Vec<Sample>, map: impl Fn(&str) -> Option<String>) -> Vec<Sample> {
    samples
        .into_iter()
        .filter_map(|mut s| {
            let l = map(&s.label)?;
            s.label = l;
            Some(s)
        })
        .collect()
}

fn count_label(samples: &[Sample], label: &str) -> usize {
    samples.iter().filter(|s| s.label == label).count()
}

/// Scores restricted for evaluation, when the head covers more classes.
fn finalize_scores(s: GestaltScores, eval_classes: &[String]) -> Result<GestaltScores> {
    if s.labels() == eval_classes {
        Ok(s)
    } else {
        s.restrict(eval_classes)
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| GestaltError::io(p, e))
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| GestaltError::io(p, e))
}

/// Runs whichever experiment `cfg.kind` names.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let mut cohorts = load_cohorts(cfg)?;
    // (training classes, evaluation classes)
    let (train_classes, eval_classes) = match cfg.kind {
        ExperimentKind::Multiclass => {
            if cohorts.classes.len() < 3 {
                return Err(GestaltError::InsufficientClasses {
                    needed: 3,
                    got: cohorts.classes.len(),
                });
            }
            (cohorts.classes.clone(), cohorts.classes.clone())
        }
        ExperimentKind::Binary => {
            let spec = cfg.binary.as_ref().expect("validated");
            let pos = spec.positive.clone();
            let negative = spec.negative.clone();
            let map = |l: &str| {
                if l == pos {
                    Some(pos.clone())
                } else if negative.is_empty() || negative.iter().any(|n| n == l) {
                    Some(NEGATIVE_LABEL.to_owned())
                } else {
                    None
                }
            };
            cohorts.train = relabel(std::mem::take(&mut cohorts.train), map);
            cohorts.val = relabel(std::mem::take(&mut cohorts.val), map);
            cohorts.test = relabel(std::mem::take(&mut cohorts.test), map);
            for (part, name) in [(&cohorts.train, "train"), (&cohorts.test, "test")] {
                if count_label(part, &pos) == 0 {
                    return Err(GestaltError::EmptyCohort(format!("positive ({name})")));
                }
                if count_label(part, NEGATIVE_LABEL) == 0 {
                    return Err(GestaltError::EmptyCohort(format!("negative ({name})")));
                }
            }
            let mut classes = vec![pos, NEGATIVE_LABEL.to_owned()];
            classes.sort();
            (classes.clone(), classes)
        }
        ExperimentKind::Specialized => {
            let spec = cfg.specialized.as_ref().expect("validated");
            let mut subset = spec.classes.clone();
            subset.dedup();
            if subset.len() < 2 {
                return Err(GestaltError::InsufficientClasses {
                    needed: 2,
                    got: subset.len(),
                });
            }
            if let Some(missing) = subset.iter().find(|c| !cohorts.classes.contains(c)) {
                return Err(GestaltError::Config(format!("specialized class `{missing}` has no samples")));
            }
            let mut test = Vec::new();
            for c in &subset {
                let held: Vec<Sample> = cohorts.test.iter().filter(|s| &s.label == c).take(spec.held_out_per_class).cloned().collect();
                if held.len() < spec.held_out_per_class {
                    return Err(GestaltError::Config(format!(
                        "class `{c}` has {} test samples, {} requested",
                        held.len(),
                        spec.held_out_per_class
                    )));
                }
                test.extend(held);
            }
            cohorts.test = test;
            let train_classes = match spec.truncation {
                Truncation::Restrict => cohorts.classes.clone(),
                Truncation::SubsetHead => {
                    let keep = |l: &str| subset.iter().any(|c| c == l).then(|| l.to_owned());
                    cohorts.train = relabel(std::mem::take(&mut cohorts.train), keep);
                    cohorts.val = relabel(std::mem::take(&mut cohorts.val), keep);
                    subset.clone()
                }
            };
            (train_classes, subset)
        }
    };
    if cohorts.test.is_empty() {
        return Err(GestaltError::EmptyCohort("test".into()));
    }

    let (pre_train, pre_val) = load_pretrain(cfg)?;
    let mut identities: Vec<String> = pre_train.iter().map(|s| s.label.clone()).collect();
    identities.sort();
    identities.dedup();

    let template = build_sample_template(&cohorts.train, cfg)?;
    let specs = region_specs(cfg);
    let p_pre_train = prepare(&pre_train, &template, &specs);
    let p_pre_val = prepare(&pre_val, &template, &specs);
    let p_train = prepare(&cohorts.train, &template, &specs);
    let p_val = prepare(&cohorts.val, &template, &specs);
    let p_test = prepare(&cohorts.test, &template, &specs);

    let jobs: Vec<RegionJob<'_>> = cfg
        .regions
        .iter()
        .enumerate()
        .map(|(slot, &region)| RegionJob {
            slot,
            region,
            pretrain_train: &p_pre_train,
            pretrain_val: &p_pre_val,
            identities: &identities,
            train: &p_train,
            val: &p_val,
            test: &p_test,
            classes: &train_classes,
            template: &template,
        })
        .collect();
    let runs = pipeline::run_regions(&jobs, cfg)?;

    let test_labels: Vec<String> = cohorts.test.iter().map(|s| s.label.clone()).collect();
    let mut region_reports = Vec::new();
    for run in &runs {
        let (mut ranked, mut labels) = (Vec::new(), Vec::new());
        for (s, y) in run.test_scores.iter().zip(&test_labels) {
            if let Some(s) = s {
                ranked.push(rank(&finalize_scores(s.clone(), &eval_classes)?));
                labels.push(y.clone());
            }
        }
        check_ranked(&ranked)?;
        let last = run.metrics.last();
        region_reports.push(RegionReport {
            region: run.region,
            name: run.region.display_name().to_owned(),
            evaluated: ranked.len(),
            topk: topk_table(&ranked, &labels, &cfg.ks)?,
            final_train_loss: last.map_or(f64::NAN, |m| m.train_loss),
            final_val_top1: last.and_then(|m| m.val_top1),
        });
    }

    let mut records = Vec::with_capacity(cohorts.test.len());
    let mut agg_ranked: Vec<RankedList> = Vec::new();
    for (i, s) in cohorts.test.iter().enumerate() {
        let per_region: Vec<Option<GestaltScores>> = runs
            .iter()
            .map(|r| r.test_scores[i].clone().map(|x| finalize_scores(x, &eval_classes)).transpose())
            .collect::<Result<_>>()?;
        let (scores, used) = match cfg.aggregation {
            AggregationRule::Softmax => aggregate_available(&per_region)?,
            AggregationRule::Logits => {
                // log-softmax differs from the logits by a per-region constant,
                // which the softmax of the mean cancels
                let used: Vec<usize> = (0..per_region.len()).filter(|&r| per_region[r].is_some()).collect();
                let logs: Vec<Vec<f64>> = per_region
                    .iter()
                    .flatten()
                    .map(|g| g.scores().iter().map(|p| p.max(1e-300).ln()).collect())
                    .collect();
                (aggregate_logits(&eval_classes, &logs)?, used)
            }
        };
        let ranked = rank(&scores);
        records.push(PredictionRecord {
            id: s.id.clone(),
            label: Some(s.label.clone()),
            regions: used.iter().map(|&r| cfg.regions[r].to_string()).collect(),
            ranked: ranked.entries.clone(),
        });
        agg_ranked.push(ranked);
    }
    check_ranked(&agg_ranked)?;
    let agg_topk = topk_table(&agg_ranked, &test_labels, &cfg.ks)?;
    let perm_seed = derive_seed(cfg.seed, &[str_id("permutation")]);
    let permutation = agg_topk
        .iter()
        .map(|t| permutation_test(&agg_ranked, &test_labels, t.k, cfg.permutation_draws, perm_seed))
        .collect::<Result<Vec<_>>>()?;
    if permutation.iter().any(|p| !(p.p_value > 0.0 && p.p_value <= 1.0)) {
        return Err(GestaltError::Invariant("p-value outside (0, 1]".into()));
    }
    let top1: Vec<String> = agg_ranked.iter().map(|r| r.entries[0].label.clone()).collect();
    let confusion = confusion_matrix(&top1, &test_labels, &eval_classes)?;
    if confusion.trace() as f64 / test_labels.len() as f64 != agg_topk[0].accuracy && agg_topk[0].k == 1 {
        return Err(GestaltError::Invariant("confusion trace disagrees with top-1".into()));
    }
    let binary = match (&cfg.kind, &cfg.binary) {
        (ExperimentKind::Binary, Some(spec)) => {
            let predicted: Vec<bool> = top1.iter().map(|l| *l == spec.positive).collect();
            let actual: Vec<bool> = test_labels.iter().map(|l| *l == spec.positive).collect();
            Some(binary_metrics(&predicted, &actual)?)
        }
        _ => None,
    };

    let mut composites: Vec<(String, Image)> = Vec::new();
    if cfg.kind == ExperimentKind::Specialized {
        let face = RegionSpec {
            side: cfg.architecture.input_side,
            ..RegionSpec::default_for(RegionTag::FullFace)
        };
        let aligned: Vec<(&str, RegionCrop)> = p_train
            .iter()
            .chain(&p_test)
            .filter_map(|p| {
                let (img, lm) = p.aligned.as_ref()?;
                generate_region(img, lm, &face).ok().map(|c| (p.label.as_str(), c))
            })
            .collect();
        for c in &eval_classes {
            let imgs: Vec<&Image> = aligned.iter().filter(|(l, _)| l == c).map(|(_, x)| &x.pixels).collect();
            composites.push((c.clone(), composite_photo(&imgs)?));
        }
    }

    let config_value = serde_json::to_value(cfg).expect("config serializes");
    let report = EvalReport {
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        kind: cfg.kind,
        seed: cfg.seed,
        config: config_value,
        classes: eval_classes.clone(),
        counts: SampleCounts {
            pretrain_train: pre_train.len(),
            pretrain_val: pre_val.len(),
            train: cohorts.train.len(),
            val: cohorts.val.len(),
            test: cohorts.test.len(),
        },
        removed: cohorts
            .removals
            .iter()
            .map(|r| RemovedSample {
                id: r.id.clone(),
                reason: match &r.reason {
                    RemovalReason::InTraining { train_id } => format!("same pixels as training sample {train_id}"),
                    RemovalReason::Duplicate { kept_id } => format!("duplicate of test sample {kept_id}"),
                },
            })
            .collect(),
        excluded: cohorts.excluded.clone(),
        regions: region_reports,
        aggregate: AggregateReport {
            rule: cfg.aggregation,
            topk: agg_topk,
            permutation,
        },
        confusion,
        binary,
        composites: composites.iter().map(|(c, _)| format!("composites/{c}.png")).collect(),
    };

    if let Some(dir) = out {
        for sub in ["checkpoints", "metrics", "plots"] {
            create_dir(&dir.join(sub))?;
        }
        write_file(&dir.join("config.toml"), cfg.to_toml())?;
        write_file(&dir.join("template.tsv"), format_template(&template) + "\n")?;
        for run in &runs {
            let r = run.region.as_str();
            write_checkpoint(&run.pretrained, &dir.join(format!("checkpoints/{r}-pretrained.ckpt")))?;
            write_checkpoint(&run.finetuned, &dir.join(format!("checkpoints/{r}-finetuned.ckpt")))?;
            write_metrics(&dir.join(format!("metrics/{r}.jsonl")), &run.metrics)?;
        }
        let lines: String = records.iter().map(|r| r.to_line() + "\n").collect();
        write_file(&dir.join("predictions.jsonl"), lines)?;
        write_file(&dir.join("report.json"), report.to_json())?;
        write_file(&dir.join("tables.txt"), report.tables())?;
        confusion_heatmap(&report.confusion).save_png(&dir.join("plots/confusion.png"))?;
        let mut bars: Vec<f64> = report.aggregate.topk.iter().map(|t| t.accuracy).collect();
        bars.extend(report.regions.iter().filter_map(|r| r.topk.first().map(|t| t.accuracy)));
        accuracy_bars(&bars).save_png(&dir.join("plots/accuracy.png"))?;
        if !composites.is_empty() {
            create_dir(&dir.join("composites"))?;
            for (c, img) in &composites {
                img.save_png(&dir.join(format!("composites/{c}.png")))?;
            }
        }
    }
    Ok(report)
}

pub fn run_binary(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    expect_kind(cfg, ExperimentKind::Binary)?;
    run(cfg, out)
}

pub fn run_specialized(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    expect_kind(cfg, ExperimentKind::Specialized)?;
    run(cfg, out)
}

pub fn run_multiclass(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    expect_kind(cfg, ExperimentKind::Multiclass)?;
    run(cfg, out)
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(GestaltError::Config(format!(
            "expected a {} experiment, got {}",
            config::kind_name(kind),
            config::kind_name(cfg.kind)
        )));
    }
    Ok(())
}
