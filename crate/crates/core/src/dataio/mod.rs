//! Manifests, splits, deduplication, augmentation and synthetic data.

pub mod augment;
pub mod dedup;
pub mod manifest;
pub mod split;
pub mod synth;

pub use augment::{apply_augmentation, augment, augment_with, AugmentParams, AugmentationPolicy};
pub use dedup::{deduplicate_and_exclude, Removal, RemovalReason};
pub use manifest::{Dataset, SampleRecord, Split};
pub use split::{split_dataset, stratified_split};
pub use synth::{SynthConfig, SynthKind, SynthSample};

use std::collections::HashMap;

use crate::error::{GestaltError, Result};
use crate::preproc::annotation::read_annotations;
use crate::preproc::LandmarkSet;
use crate::raster::Image;

/// A manifest record with its image decoded and landmarks resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: Image,
    pub landmarks: LandmarkSet,
}

/// Decodes every record of `dataset`. Records whose annotation file holds no
/// entry for their image are excluded and returned by id; unreadable files are
/// errors. Images whose shorter side is below `min_side` are excluded as well.
pub fn load_samples(dataset: &Dataset, min_side: usize) -> Result<(Vec<LoadedSample>, Vec<String>)> {
    let mut annotation_cache: HashMap<String, HashMap<String, LandmarkSet>> = HashMap::new();
    let mut loaded = Vec::with_capacity(dataset.len());
    let mut excluded = Vec::new();
    for record in dataset.records() {
        if !annotation_cache.contains_key(&record.landmarks) {
            let parsed = read_annotations(&dataset.resolve(&record.landmarks))?;
            let by_image = parsed.into_iter().map(|a| (a.image, a.landmarks)).collect();
            annotation_cache.insert(record.landmarks.clone(), by_image);
        }
        let Some(landmarks) = annotation_cache[&record.landmarks].get(&record.image) else {
            log::info!("excluding {}: no landmarks for {}", record.id, record.image);
            excluded.push(record.id.clone());
            continue;
        };
        let image = Image::load(&dataset.resolve(&record.image))?;
        if image.width().min(image.height()) < min_side {
            log::info!("excluding {}: below {min_side} px", record.id);
            excluded.push(record.id.clone());
            continue;
        }
        loaded.push(LoadedSample {
            record: record.clone(),
            landmarks: landmarks.clone(),
            image,
        });
    }
    Ok((loaded, excluded))
}

/// Per-class loss weights keyed by label; labels not listed weigh 1.
pub fn class_weight_vector(classes: &[String], weights: &std::collections::BTreeMap<String, f64>) -> Result<Vec<f64>> {
    for (label, w) in weights {
        if !classes.contains(label) {
            return Err(GestaltError::Config(format!("class weight for unknown label {label}")));
        }
        if !(w.is_finite() && *w > 0.0) {
            return Err(GestaltError::Config(format!("class weight for {label} must be > 0")));
        }
    }
    Ok(classes.iter().map(|c| weights.get(c).copied().unwrap_or(1.0)).collect())
}
