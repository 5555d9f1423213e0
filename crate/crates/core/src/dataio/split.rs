use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::manifest::Dataset;
use crate::error::{GestaltError, Result};
use crate::rng::stream;

/// Stratified split of item indices by label.
///
/// Classes with at least two members contribute `round(N * fraction)`
/// training items in total, where `N` counts those members; each class gets
/// the floor of its proportional share (at least 1, at most `n - 1`) and the
/// leftover goes to the largest fractional remainders. Singleton classes go to
/// train. Both index lists are returned in ascending order.
pub fn stratified_split<L: Ord + Clone>(labels: &[L], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GestaltError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.clone()).or_default().push(i);
    }
    let mut train = Vec::with_capacity(labels.len());
    let mut val = Vec::new();
    let mut strata = Vec::new();
    for (k, (_, mut members)) in by_class.into_iter().enumerate() {
        if members.len() < 2 {
            log::info!("class {k} has a single sample; assigned to train");
            train.extend(members);
            continue;
        }
        members.shuffle(&mut stream(seed, &[k as u64]));
        strata.push(members);
    }
    let eligible: usize = strata.iter().map(Vec::len).sum();
    let target = (eligible as f64 * train_fraction).round() as usize;
    let mut quota: Vec<usize> = strata
        .iter()
        .map(|m| ((m.len() as f64 * train_fraction).floor() as usize).clamp(1, m.len() - 1))
        .collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    let remainder = |i: usize| {
        let ideal = strata[i].len() as f64 * train_fraction;
        ideal - ideal.floor()
    };
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    for &i in order.iter().cycle().take(order.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[i] < strata[i].len() - 1 {
            quota[i] += 1;
            assigned += 1;
        }
    }
    for (members, q) in strata.iter().zip(quota) {
        train.extend_from_slice(&members[..q]);
        val.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Deterministic stratified train/validation split of a dataset.
pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let labels: Vec<&str> = dataset.records().iter().map(|r| r.label.as_str()).collect();
    let (train_idx, _) = stratified_split(&labels, train_fraction, seed)?;
    let train_ids: HashSet<&str> = train_idx
        .iter()
        .map(|&i| dataset.records()[i].id.as_str())
        .collect();
    let train = dataset.filter(|r| train_ids.contains(r.id.as_str()));
    let val = dataset.filter(|r| !train_ids.contains(r.id.as_str()));
    Ok((train, val))
}
