//! Top-K accuracy, label-permutation significance, confusion matrices,
//! binary cohort metrics and composite photos.

pub mod plot;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::RankedList;
use crate::error::{GestaltError, Result};
use crate::raster::Image;
use crate::rng::stream;

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const DEFAULT_DRAWS: usize = 1_000_000;
/// Draws per independently seeded block of the permutation test.
const BLOCK: usize = 10_000;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(GestaltError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// `hits[i][c]`: class `c` lies in the first `k` entries of list `i`.
/// Classes are indexed by position in `classes`.
fn membership(ranked: &[RankedList], classes: &[String], k: usize) -> Result<Vec<Vec<bool>>> {
    ranked
        .iter()
        .map(|r| {
            let mut row = vec![false; classes.len()];
            for label in r.top(k) {
                let c = classes
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| GestaltError::UnknownLabel {
                        id: "<ranked list>".into(),
                        label: label.to_owned(),
                    })?;
                row[c] = true;
            }
            Ok(row)
        })
        .collect()
}

/// Fraction of samples whose true label is among the first `k` entries.
pub fn topk_accuracy(ranked: &[RankedList], labels: &[String], k: usize) -> Result<f64> {
    same_len(ranked.len(), labels.len())?;
    if k == 0 {
        return Err(GestaltError::InvalidArgument("k must be >= 1".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = ranked
        .iter()
        .zip(labels)
        .filter(|(r, y)| r.top(k).any(|l| l == y.as_str()))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationStats {
    pub k: usize,
    pub observed: f64,
    pub mean: f64,
    /// Sample standard deviation of the permuted accuracies.
    pub sd: f64,
    /// `(1 + #{draws >= observed}) / (draws + 1)`.
    pub p_value: f64,
    pub draws: usize,
}

fn distinct_classes(ranked: &[RankedList], labels: &[String]) -> Vec<String> {
    let mut classes: Vec<String> = labels
        .iter()
        .cloned()
        .chain(ranked.iter().flat_map(|r| r.entries.iter().map(|e| e.label.clone())))
        .collect();
    classes.sort();
    classes.dedup();
    classes
}

/// Null distribution of top-K accuracy under uniformly permuted labels with
/// predictions held fixed. Draws run in seeded blocks and are reduced in block
/// order on integer hit counts, so results do not depend on thread count.
pub fn permutation_test(
    ranked: &[RankedList],
    labels: &[String],
    k: usize,
    draws: usize,
    seed: u64,
) -> Result<PermutationStats> {
    same_len(ranked.len(), labels.len())?;
    if draws == 0 || k == 0 || labels.is_empty() {
        return Err(GestaltError::InvalidArgument("need draws >= 1, k >= 1 and samples".into()));
    }
    let classes = distinct_classes(ranked, labels);
    let member = membership(ranked, &classes, k)?;
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected"))
        .collect();
    let observed_hits = (0..y.len()).filter(|&i| member[i][y[i]]).count() as u64;
    let blocks = draws.div_ceil(BLOCK);
    let partial: Vec<(u64, u128, u64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let n = BLOCK.min(draws - b * BLOCK);
            let mut rng = stream(seed, &[k as u64, b as u64]);
            let mut perm = y.clone();
            let (mut sum, mut sq, mut ge) = (0u64, 0u128, 0u64);
            for _ in 0..n {
                perm.shuffle(&mut rng);
                let h = perm.iter().enumerate().filter(|&(i, &c)| member[i][c]).count() as u64;
                sum += h;
                sq += (h as u128) * (h as u128);
                ge += (h >= observed_hits) as u64;
            }
            (sum, sq, ge)
        })
        .collect();
    let (sum, sq, ge) = partial
        .iter()
        .fold((0u64, 0u128, 0u64), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let n = labels.len() as f64;
    let d = draws as f64;
    let mean_hits = sum as f64 / d;
    let var_hits = if draws > 1 {
        ((sq as f64 - (sum as f64) * mean_hits) / (d - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(PermutationStats {
        k,
        observed: observed_hits as f64 / n,
        mean: mean_hits / n,
        sd: var_hits.sqrt() / n,
        p_value: (1 + ge) as f64 / (draws + 1) as f64,
        draws,
    })
}

/// Exact expectation of permuted top-K accuracy:
/// `(1/N^2) * sum_i sum_{c in topK(i)} n_c`, with `n_c` the label count of `c`.
pub fn permutation_mean_analytic(ranked: &[RankedList], labels: &[String], k: usize) -> Result<f64> {
    same_len(ranked.len(), labels.len())?;
    let n = labels.len() as f64;
    let mut total = 0usize;
    for r in ranked {
        for c in r.top(k) {
            total += labels.iter().filter(|l| l.as_str() == c).count();
        }
    }
    Ok(total as f64 / (n * n))
}

/// `counts[true][predicted]` over `classes` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion_matrix(predictions: &[String], labels: &[String], classes: &[String]) -> Result<ConfusionMatrix> {
    same_len(predictions.len(), labels.len())?;
    let index = |l: &String| {
        classes.iter().position(|c| c == l).ok_or_else(|| GestaltError::UnknownLabel {
            id: "<confusion matrix>".into(),
            label: l.clone(),
        })
    };
    let mut counts = vec![vec![0; classes.len()]; classes.len()];
    for (p, y) in predictions.iter().zip(labels) {
        counts[index(y)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

/// Rates are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl BinaryMetrics {
    pub fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        Self {
            tp,
            fn_,
            tn,
            fp,
            accuracy: ratio(tp + tn, tp + fn_ + tn + fp),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }
}

/// Counts and rates, whatever the cohort composition.
pub fn binary_metrics_partial(predicted_positive: &[bool], actual_positive: &[bool]) -> Result<BinaryMetrics> {
    same_len(predicted_positive.len(), actual_positive.len())?;
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (&p, &a) in predicted_positive.iter().zip(actual_positive) {
        match (a, p) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    Ok(BinaryMetrics::from_counts(tp, fn_, tn, fp))
}

/// Like [`binary_metrics_partial`], but an absent cohort is an error.
pub fn binary_metrics(predicted_positive: &[bool], actual_positive: &[bool]) -> Result<BinaryMetrics> {
    let m = binary_metrics_partial(predicted_positive, actual_positive)?;
    if m.tp + m.fn_ == 0 {
        return Err(GestaltError::EmptyCohort("positive".into()));
    }
    if m.tn + m.fp == 0 {
        return Err(GestaltError::EmptyCohort("negative".into()));
    }
    Ok(m)
}

/// Per-pixel mean of equally sized images.
pub fn composite_photo(images: &[&Image]) -> Result<Image> {
    let first = images.first().ok_or_else(|| GestaltError::EmptyCohort("composite".into()))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    if images.iter().any(|i| (i.width(), i.height(), i.channels()) != (w, h, c)) {
        return Err(GestaltError::ShapeMismatch("composite inputs differ in size".into()));
    }
    let n = images.len() as f64;
    let mut acc = vec![0f64; first.data().len()];
    for img in images {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v as f64;
        }
    }
    Image::new(w, h, c, acc.into_iter().map(|a| (a / n) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub accuracy: f64,
}

/// Top-K for several K, checked to be non-decreasing in K.
pub fn topk_table(ranked: &[RankedList], labels: &[String], ks: &[usize]) -> Result<Vec<TopK>> {
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let out: Vec<TopK> = sorted
        .iter()
        .map(|&k| Ok(TopK { k, accuracy: topk_accuracy(ranked, labels, k)? }))
        .collect::<Result<_>>()?;
    if out.windows(2).any(|w| w[1].accuracy < w[0].accuracy) {
        return Err(GestaltError::Invariant("top-K accuracy decreased with K".into()));
    }
    if out.iter().any(|t| !(0.0..=1.0).contains(&t.accuracy)) {
        return Err(GestaltError::Invariant("accuracy outside [0, 1]".into()));
    }
    Ok(out)
}

/// Checks every ranked list is sorted and sums to one.
pub fn check_ranked(ranked: &[RankedList]) -> Result<()> {
    for r in ranked {
        if r.entries.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(GestaltError::Invariant("ranked list out of order".into()));
        }
        let total: f64 = r.entries.iter().map(|e| e.score).sum();
        if (total - 1.0).abs() > crate::ensemble::NORMALIZATION_TOL {
            return Err(GestaltError::Invariant(format!("ranked scores sum to {total}")));
        }
    }
    Ok(())
}

/// Summary of a labeled prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub code_version: String,
    pub seed: u64,
    pub samples: usize,
    pub classes: Vec<String>,
    pub topk: Vec<TopK>,
    pub permutation: Vec<PermutationStats>,
    pub confusion: ConfusionMatrix,
}

impl PredictionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Scores labeled prediction records. Records without a label are an error.
pub fn evaluate_predictions(
    records: &[crate::ensemble::PredictionRecord],
    ks: &[usize],
    draws: usize,
    seed: u64,
) -> Result<PredictionReport> {
    if records.is_empty() {
        return Err(GestaltError::EmptyCohort("predictions".into()));
    }
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        labels.push(r.label.clone().ok_or_else(|| {
            GestaltError::InvalidArgument(format!("prediction `{}` has no true label", r.id))
        })?);
    }
    let ranked: Vec<RankedList> = records.iter().map(|r| r.ranked_list()).collect();
    check_ranked(&ranked)?;
    let classes = distinct_classes(&ranked, &labels);
    let topk = topk_table(&ranked, &labels, ks)?;
    let permutation = topk
        .iter()
        .map(|t| permutation_test(&ranked, &labels, t.k, draws, seed))
        .collect::<Result<Vec<_>>>()?;
    let top1: Vec<String> = ranked.iter().map(|r| r.entries[0].label.clone()).collect();
    let confusion = confusion_matrix(&top1, &labels, &classes)?;
    Ok(PredictionReport {
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed,
        samples: records.len(),
        classes,
        topk,
        permutation,
        confusion,
    })
}
