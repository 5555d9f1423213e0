use std::collections::HashMap;
use std::hash::Hash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemovalReason {
    /// Same content as a training record.
    InTraining { train_id: String },
    /// Same content as an earlier test record.
    Duplicate { kept_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Removal {
    pub id: String,
    pub reason: RemovalReason,
}

/// Drops test items whose content hash appears in the training set, then
/// keeps only the first of any group of test items with equal hashes.
/// Returns the indices of surviving test items (in input order) and one
/// removal entry per dropped item.
pub fn deduplicate_and_exclude<H: Eq + Hash>(
    test: &[(String, H)],
    train: &[(String, H)],
) -> (Vec<usize>, Vec<Removal>) {
    let train_index: HashMap<&H, &str> = train.iter().map(|(id, h)| (h, id.as_str())).collect();
    let mut kept_hashes: HashMap<&H, &str> = HashMap::new();
    let mut kept = Vec::with_capacity(test.len());
    let mut removed = Vec::new();
    for (i, (id, h)) in test.iter().enumerate() {
        if let Some(train_id) = train_index.get(h) {
            removed.push(Removal {
                id: id.clone(),
                reason: RemovalReason::InTraining {
                    train_id: (*train_id).to_owned(),
                },
            });
        } else if let Some(kept_id) = kept_hashes.get(h) {
            removed.push(Removal {
                id: id.clone(),
                reason: RemovalReason::Duplicate {
                    kept_id: (*kept_id).to_owned(),
                },
            });
        } else {
            kept_hashes.insert(h, id);
            kept.push(i);
        }
    }
    (kept, removed)
}
