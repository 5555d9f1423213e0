//! Averaging per-region softmax outputs into one ranked class list.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{GestaltError, Result};
use crate::nn::softmax;

/// Tolerance on `sum(scores) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// A score per label, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestaltScores {
    labels: Vec<String>,
    scores: Vec<f64>,
}

impl GestaltScores {
    pub fn new(labels: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(GestaltError::LengthMismatch {
                left: labels.len(),
                right: scores.len(),
            });
        }
        if labels.is_empty() {
            return Err(GestaltError::InvalidArgument("scores over zero labels".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(GestaltError::InvalidArgument(format!("duplicate label `{dup}`")));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(GestaltError::Invariant(format!("score {s} outside [0, 1]")));
        }
        let total: f64 = scores.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(GestaltError::Invariant(format!("scores sum to {total}, not 1")));
        }
        Ok(Self { labels, scores })
    }

    /// Softmax of `logits` over `labels`.
    pub fn from_logits(labels: Vec<String>, logits: &[f64]) -> Result<Self> {
        Self::new(labels, softmax(logits))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score_of(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.scores[i])
    }

    pub fn argmax(&self) -> usize {
        rank_indices(&self.scores)[0]
    }

    /// Keeps only `subset` (in that order) and renormalizes.
    pub fn restrict(&self, subset: &[String]) -> Result<Self> {
        let mut scores = Vec::with_capacity(subset.len());
        for label in subset {
            scores.push(self.score_of(label).ok_or(GestaltError::LabelMismatch)?);
        }
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            scores.iter_mut().for_each(|s| *s /= total);
        } else {
            scores.iter_mut().for_each(|s| *s = 1.0 / subset.len() as f64);
        }
        Self::new(subset.to_vec(), scores)
    }
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub score: f64,
}

/// Labels by non-increasing score; equal scores keep label-list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn position(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn top(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(k).map(|e| e.label.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn rank(scores: &GestaltScores) -> RankedList {
    let entries = rank_indices(&scores.scores)
        .into_iter()
        .map(|i| RankedEntry {
            label: scores.labels[i].clone(),
            score: scores.scores[i],
        })
        .collect();
    RankedList { entries }
}

fn shared_labels<'a>(labels: impl IntoIterator<Item = &'a [String]>) -> Result<&'a [String]> {
    let mut iter = labels.into_iter();
    let first = iter.next().ok_or(GestaltError::EmptyEnsemble)?;
    if iter.any(|l| l != first) {
        return Err(GestaltError::LabelMismatch);
    }
    Ok(first)
}

/// Element-wise mean of region score vectors.
pub fn aggregate(region_scores: &[GestaltScores]) -> Result<GestaltScores> {
    let labels = shared_labels(region_scores.iter().map(|s| s.labels.as_slice()))?;
    let n = region_scores.len() as f64;
    let mut mean = vec![0.0; labels.len()];
    for s in region_scores {
        for (m, v) in mean.iter_mut().zip(&s.scores) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    GestaltScores::new(labels.to_vec(), mean)
}

/// Mean over the regions that produced a prediction. Returns the indices of
/// the contributing regions alongside the result.
pub fn aggregate_available(region_scores: &[Option<GestaltScores>]) -> Result<(GestaltScores, Vec<usize>)> {
    let present: Vec<usize> = (0..region_scores.len()).filter(|&i| region_scores[i].is_some()).collect();
    let available: Vec<GestaltScores> = region_scores.iter().flatten().cloned().collect();
    Ok((aggregate(&available)?, present))
}

/// Softmax of the mean of per-region logits.
pub fn aggregate_logits(labels: &[String], region_logits: &[Vec<f64>]) -> Result<GestaltScores> {
    if region_logits.is_empty() {
        return Err(GestaltError::EmptyEnsemble);
    }
    if region_logits.iter().any(|l| l.len() != labels.len()) {
        return Err(GestaltError::LabelMismatch);
    }
    let n = region_logits.len() as f64;
    let mean: Vec<f64> = (0..labels.len())
        .map(|j| region_logits.iter().map(|l| l[j]).sum::<f64>() / n)
        .collect();
    GestaltScores::from_logits(labels.to_vec(), &mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationRule {
    /// Mean of softmax vectors.
    #[default]
    Softmax,
    /// Softmax of mean logits.
    Logits,
}

/// One line of a prediction file: sample id, contributing regions and the
/// full ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub regions: Vec<String>,
    pub ranked: Vec<RankedEntry>,
}

impl PredictionRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("prediction records serialize")
    }

    pub fn ranked_list(&self) -> RankedList {
        RankedList {
            entries: self.ranked.clone(),
        }
    }
}

/// Parses line-delimited prediction records, checking each ranked list is
/// sorted and normalized.
pub fn parse_predictions(text: &str, origin: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| GestaltError::Parse {
            path: origin.to_owned(),
            line: i + 1,
            msg,
        };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.ranked.windows(2).any(|w| !(w[0].score >= w[1].score)) {
            return Err(err("ranked list is not in non-increasing order".into()));
        }
        let labels = rec.ranked.iter().map(|e| e.label.clone()).collect();
        let scores = rec.ranked.iter().map(|e| e.score).collect();
        GestaltScores::new(labels, scores).map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
