//! Random geometric augmentation of region crops.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GestaltError, Result};
use crate::preproc::RegionCrop;
use crate::raster::Image;
use crate::rng::stream;

/// Symmetric sampling ranges. Angles: rotation in degrees, shear in radians.
/// A zoom range `z` samples per-axis scale factors in `[1 - z, 1 + z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub rotation_deg: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub shear: f64,
    pub zoom: f64,
    pub horizontal_flip: bool,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            rotation_deg: 5.0,
            width_shift: 0.05,
            height_shift: 0.05,
            shear: 5.0 * std::f64::consts::PI / 180.0,
            zoom: 0.05,
            horizontal_flip: true,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self {
            rotation_deg: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            shear: 0.0,
            zoom: 0.0,
            horizontal_flip: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.rotation_deg, self.width_shift, self.height_shift, self.shear, self.zoom];
        if ranges.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || self.zoom >= 1.0 {
            return Err(GestaltError::InvalidArgument(
                "augmentation ranges must be finite and >= 0 (zoom < 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self
            == Self {
                seed: self.seed,
                ..Self::disabled()
            }
    }
}

/// One draw from an [`AugmentationPolicy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// radians
    pub rotation: f64,
    /// pixels
    pub tx: f64,
    pub ty: f64,
    /// radians
    pub shear: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
    pub flip: bool,
}

fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range == 0.0 {
        0.0
    } else {
        rng.random_range(-range..=range)
    }
}

impl AugmentParams {
    pub fn sample(policy: &AugmentationPolicy, side: usize, rng: &mut ChaCha8Rng) -> Self {
        let rotation = symmetric(rng, policy.rotation_deg).to_radians();
        let tx = symmetric(rng, policy.width_shift) * side as f64;
        let ty = symmetric(rng, policy.height_shift) * side as f64;
        let shear = symmetric(rng, policy.shear);
        let zoom_x = 1.0 + symmetric(rng, policy.zoom);
        let zoom_y = 1.0 + symmetric(rng, policy.zoom);
        let flip = policy.horizontal_flip && rng.random_bool(0.5);
        Self {
            rotation,
            tx,
            ty,
            shear,
            zoom_x,
            zoom_y,
            flip,
        }
    }

    fn is_identity(&self) -> bool {
        self.rotation == 0.0
            && self.tx == 0.0
            && self.ty == 0.0
            && self.shear == 0.0
            && self.zoom_x == 1.0
            && self.zoom_y == 1.0
            && !self.flip
    }
}

/// Output pixel `q` reads input `c + R * Sh * Z * (q - c) + t`, where `c`
/// is the image center, with edge replication outside and values clamped to
/// `[0, 1]`; the flip is applied last.
pub fn apply_augmentation(image: &Image, p: &AugmentParams) -> Image {
    if p.is_identity() {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = p.rotation.sin_cos();
    let (ss, sc) = p.shear.sin_cos();
    // R * Sh * Z with Sh = [[1, -sin], [0, cos]]
    let m00 = c * p.zoom_x;
    let m01 = (-c * ss - s * sc) * p.zoom_y;
    let m10 = s * p.zoom_x;
    let m11 = (-s * ss + c * sc) * p.zoom_y;
    let mut out = Image::filled(w, h, 0.0);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = cx + m00 * dx + m01 * dy + p.tx;
            let sy = cy + m10 * dx + m11 * dy + p.ty;
            let v = image.sample_bilinear_clamped(sx, sy, 0).clamp(0.0, 1.0);
            let ox = if p.flip { w - 1 - x } else { x };
            out.set(ox, y, 0, v);
        }
    }
    out
}

/// Augments with `policy.seed` as the random stream.
pub fn augment(crop: &RegionCrop, policy: &AugmentationPolicy) -> RegionCrop {
    augment_with(crop, policy, &mut stream(policy.seed, &[]))
}

pub fn augment_with(crop: &RegionCrop, policy: &AugmentationPolicy, rng: &mut ChaCha8Rng) -> RegionCrop {
    let params = AugmentParams::sample(policy, crop.side(), rng);
    RegionCrop {
        tag: crop.tag,
        pixels: apply_augmentation(&crop.pixels, &params),
    }
}
