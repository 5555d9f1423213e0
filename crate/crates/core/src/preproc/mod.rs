//! Alignment and region cropping: raw image plus landmarks in, six aligned
//! grayscale crops out.

pub mod annotation;
pub mod landmarks;
pub mod regions;
pub mod template;
pub mod transform;

pub use landmarks::{Anchor, LandmarkSchema, LandmarkSet, Point};
pub use regions::{generate_region, generate_regions, RegionCrop, RegionRule, RegionSpec, RegionTag};
pub use template::{build_template, CanonicalTemplate};
pub use transform::{apply_alignment, apply_alignment_into, estimate_alignment, SimilarityTransform};

use crate::error::Result;
use crate::raster::Image;

/// Output of [`preprocess`].
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub transform: SimilarityTransform,
    pub aligned: Image,
    pub aligned_landmarks: LandmarkSet,
    pub crops: Vec<RegionCrop>,
}

/// Aligns `image` to `template` using its landmarks and cuts the crops.
pub fn preprocess(
    image: &Image,
    landmarks: &LandmarkSet,
    template: &CanonicalTemplate,
    specs: &[RegionSpec],
) -> Result<Preprocessed> {
    let transform = estimate_alignment(landmarks, &template.landmarks)?;
    let aligned = apply_alignment_into(&image.to_grayscale(), &transform, template.width, template.height)?;
    let aligned_landmarks = landmarks.map(|p| transform.apply(p));
    let crops = generate_regions(&aligned, &aligned_landmarks, specs)?;
    Ok(Preprocessed {
        transform,
        aligned,
        aligned_landmarks,
        crops,
    })
}
