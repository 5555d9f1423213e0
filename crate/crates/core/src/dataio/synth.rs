//! Parametric face-like images for desk-scale training and tests.
//!
//! A face is described by a handful of geometric and texture features. Each
//! class owns a prototype offset vector drawn from the seed; samples add
//! within-class jitter, a random pose and pixel noise. Every feature is
//! left/right symmetric, so horizontal flips never change the class signal.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Dataset, SampleRecord, Split};
use crate::error::{GestaltError, Result};
use crate::preproc::annotation::format_annotation;
use crate::preproc::landmarks::SYNTHETIC_8;
use crate::preproc::{LandmarkSet, Point, SimilarityTransform};
use crate::raster::Image;
use crate::rng::{str_id, stream};

/// Number of class-controlled features.
pub const FEATURES: usize = 14;

/// Half-range of each feature's class offset, in the feature's own unit.
const FEATURE_RANGE: [f64; FEATURES] = [
    3.0,  // eye half-spacing
    3.0,  // eye height
    1.5,  // eye radius
    0.15, // pupil intensity
    0.3,  // brow tilt
    4.0,  // nose length
    2.0,  // nose width
    4.0,  // mouth half-width
    4.0,  // mouth curvature
    3.0,  // mouth height
    2.0,  // ear radius
    0.35, // skin stripe frequency
    0.08, // skin tone
    5.0,  // face half-height
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Syndrome-like classes: moderate separation, broad within-class spread.
    Syndrome,
    /// Identity-like classes for pretraining.
    Identity,
}

impl SynthKind {
    fn tag(self) -> u64 {
        match self {
            SynthKind::Syndrome => 1,
            SynthKind::Identity => 2,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            SynthKind::Syndrome => "syndrome",
            SynthKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub classes: usize,
    pub per_class: usize,
    /// Multiplier on the class offsets.
    pub class_strength: f64,
    /// Within-class jitter as a fraction of each feature range.
    pub spread: f64,
    pub canvas: usize,
    /// radians
    pub max_rotation: f64,
    pub max_scale_change: f64,
    /// pixels
    pub max_shift: f64,
    pub pixel_noise: f64,
    /// Landmark annotation noise, pixels (sd).
    pub landmark_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::Syndrome,
            classes: 8,
            per_class: 35,
            class_strength: 1.0,
            spread: 0.3,
            canvas: 128,
            max_rotation: 0.2,
            max_scale_change: 0.1,
            max_shift: 6.0,
            pixel_noise: 0.02,
            landmark_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn identities(classes: usize, per_class: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Identity,
            classes,
            per_class,
            class_strength: 1.0,
            spread: 0.08,
            seed,
            ..Default::default()
        }
    }

    pub fn syndromes(classes: usize, per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.class_strength,
            self.spread,
            self.max_rotation,
            self.max_scale_change,
            self.max_shift,
            self.pixel_noise,
            self.landmark_noise,
        ];
        if finite.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.max_scale_change >= 0.5 {
            return Err(GestaltError::Config("synthetic ranges must be finite and >= 0".into()));
        }
        if self.canvas < 64 {
            return Err(GestaltError::Config("synthetic canvas must be at least 64 px".into()));
        }
        Ok(())
    }

    pub fn label(&self, class: usize) -> String {
        format!("{}-{class:02}", self.kind.prefix())
    }
}

/// Face geometry in face coordinates: origin at the face center, +y down,
/// unit = pixel at pose scale 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceParams {
    pub eye_dx: f64,
    pub eye_y: f64,
    pub eye_r: f64,
    pub pupil: f64,
    pub brow_tilt: f64,
    pub nose_y: f64,
    pub nose_w: f64,
    pub mouth_w: f64,
    pub mouth_curve: f64,
    pub mouth_y: f64,
    pub ear_r: f64,
    pub stripe_freq: f64,
    pub skin: f64,
    pub face_ry: f64,
    pub face_rx: f64,
}

impl FaceParams {
    pub const NEUTRAL: FaceParams = FaceParams {
        eye_dx: 16.0,
        eye_y: -12.0,
        eye_r: 5.0,
        pupil: 0.2,
        brow_tilt: 0.0,
        nose_y: 8.0,
        nose_w: 4.0,
        mouth_w: 12.0,
        mouth_curve: 0.0,
        mouth_y: 26.0,
        ear_r: 6.0,
        stripe_freq: 0.6,
        skin: 0.62,
        face_ry: 50.0,
        face_rx: 40.0,
    };

    /// Neutral face shifted by `offsets`, each entry in units of its range.
    pub fn from_offsets(offsets: &[f64; FEATURES]) -> Self {
        let d: Vec<f64> = offsets.iter().zip(FEATURE_RANGE).map(|(o, r)| o * r).collect();
        let n = Self::NEUTRAL;
        Self {
            eye_dx: n.eye_dx + d[0],
            eye_y: n.eye_y + d[1],
            eye_r: (n.eye_r + d[2]).max(2.0),
            pupil: (n.pupil + d[3]).clamp(0.0, 0.6),
            brow_tilt: n.brow_tilt + d[4],
            nose_y: n.nose_y + d[5],
            nose_w: (n.nose_w + d[6]).max(1.5),
            mouth_w: (n.mouth_w + d[7]).max(4.0),
            mouth_curve: n.mouth_curve + d[8],
            mouth_y: n.mouth_y + d[9],
            ear_r: (n.ear_r + d[10]).max(2.5),
            stripe_freq: (n.stripe_freq + d[11]).max(0.1),
            skin: (n.skin + d[12]).clamp(0.4, 0.8),
            face_ry: n.face_ry + d[13],
            face_rx: n.face_rx,
        }
    }

    fn ear_center(&self) -> (f64, f64) {
        (self.face_rx + 1.0, -4.0)
    }

    /// Landmarks in face coordinates, in synthetic-8 order.
    pub fn landmarks(&self) -> [Point; 8] {
        let (ex, ey) = self.ear_center();
        [
            Point::new(-self.eye_dx, self.eye_y),
            Point::new(self.eye_dx, self.eye_y),
            Point::new(0.0, self.nose_y),
            Point::new(0.0, self.mouth_y),
            Point::new(-ex, ey),
            Point::new(ex, ey),
            Point::new(0.0, self.face_ry),
            Point::new(0.0, -0.7 * self.face_ry),
        ]
    }

    /// Noise-free intensity at face coordinates `(u, v)`.
    pub fn intensity(&self, u: f64, v: f64, background: f64) -> f64 {
        let au = u.abs();
        let mut val = background;
        // ears sit behind the face outline
        let (ecx, ecy) = self.ear_center();
        let ear = ellipse_cover(au - ecx, v - ecy, self.ear_r, self.ear_r * 1.6);
        val = mix(val, self.skin - 0.07, ear);
        let face = ellipse_cover(u, v, self.face_rx, self.face_ry);
        let skin = self.skin + 0.05 * (self.stripe_freq * v).sin();
        val = mix(val, skin, face);
        // brows
        let bx = au - self.eye_dx;
        let by = v - (self.eye_y - self.eye_r - 3.0) + self.brow_tilt * bx;
        let brow = band_cover(by, 1.2) * span_cover(bx, self.eye_r + 2.0);
        val = mix(val, 0.3, brow * face);
        // eyes
        let sclera = ellipse_cover(au - self.eye_dx, v - self.eye_y, self.eye_r, self.eye_r * 0.6);
        val = mix(val, 0.92, sclera);
        let pupil = ellipse_cover(au - self.eye_dx, v - self.eye_y, self.eye_r * 0.45, self.eye_r * 0.45);
        val = mix(val, self.pupil, pupil);
        // nose bridge and nostrils
        let bridge_top = self.eye_y + 2.0;
        let bridge = span_cover(au, self.nose_w * 0.5)
            * span_cover(v - (bridge_top + self.nose_y) / 2.0, ((self.nose_y - bridge_top) / 2.0).max(0.5));
        val = mix(val, self.skin - 0.12, bridge * face);
        let nostril = ellipse_cover(au - self.nose_w, v - self.nose_y, 1.6, 1.2);
        val = mix(val, 0.25, nostril);
        // mouth arc
        let t = u / self.mouth_w;
        let arc = self.mouth_y + self.mouth_curve * (t * t - 0.5);
        let mouth = band_cover(v - arc, 1.5) * span_cover(u, self.mouth_w);
        mix(val, 0.28, mouth)
    }
}

fn mix(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Coverage of a one-pixel-soft edge at signed distance `d` (negative inside).
fn soft(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn ellipse_cover(x: f64, y: f64, rx: f64, ry: f64) -> f64 {
    let q = ((x / rx).powi(2) + (y / ry).powi(2)).sqrt();
    soft((q - 1.0) * rx.min(ry))
}

fn band_cover(d: f64, half: f64) -> f64 {
    soft(d.abs() - half)
}

fn span_cover(x: f64, half: f64) -> f64 {
    soft(x.abs() - half)
}

/// One rendered sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub label: String,
    pub class: usize,
    pub image: Image,
    pub landmarks: LandmarkSet,
    /// Face-to-image pose that produced the sample.
    pub pose: SimilarityTransform,
}

fn uniform(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

/// Class prototype offsets, in units of each feature range.
pub fn class_offsets(cfg: &SynthConfig, class: usize) -> [f64; FEATURES] {
    let mut rng = stream(cfg.seed, &[cfg.kind.tag(), str_id("class"), class as u64]);
    let mut out = [0.0; FEATURES];
    for o in &mut out {
        *o = uniform(&mut rng, 1.0) * cfg.class_strength;
    }
    out
}

/// Renders `params` under `pose` onto a `canvas x canvas` image.
pub fn render(params: &FaceParams, pose: &SimilarityTransform, canvas: usize, noise: f64, rng: &mut ChaCha8Rng) -> Image {
    let inv = pose.inverse();
    let gauss = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut data = Vec::with_capacity(canvas * canvas);
    for y in 0..canvas {
        for x in 0..canvas {
            let p = inv.apply(Point::new(x as f64, y as f64));
            let mut v = params.intensity(p.x, p.y, 0.15);
            if noise > 0.0 {
                v += gauss.sample(rng);
            }
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Image::gray(canvas, canvas, data).expect("square canvas")
}

/// Renders sample `index` of `class`. Fully determined by the config seed.
pub fn sample(cfg: &SynthConfig, class: usize, index: usize) -> Result<SynthSample> {
    cfg.validate()?;
    let proto = class_offsets(cfg, class);
    let mut rng = stream(cfg.seed, &[cfg.kind.tag(), str_id("sample"), class as u64, index as u64]);
    let mut offsets = proto;
    for o in &mut offsets {
        *o += uniform(&mut rng, cfg.spread);
    }
    let params = FaceParams::from_offsets(&offsets);
    let c = cfg.canvas as f64 / 2.0;
    let scale = 1.0 + uniform(&mut rng, cfg.max_scale_change);
    let rotation = uniform(&mut rng, cfg.max_rotation);
    let tx = c + uniform(&mut rng, cfg.max_shift);
    let ty = c + uniform(&mut rng, cfg.max_shift);
    let pose = SimilarityTransform::new(scale, rotation, tx, ty)?;
    let image = render(&params, &pose, cfg.canvas, cfg.pixel_noise, &mut rng);
    let lm_noise = Normal::new(0.0, cfg.landmark_noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let points = params
        .landmarks()
        .iter()
        .map(|p| {
            let q = pose.apply(*p);
            if cfg.landmark_noise > 0.0 {
                Point::new(q.x + lm_noise.sample(&mut rng), q.y + lm_noise.sample(&mut rng))
            } else {
                q
            }
        })
        .collect();
    let label = cfg.label(class);
    Ok(SynthSample {
        id: format!("{label}-{index:04}"),
        label,
        class,
        image,
        landmarks: LandmarkSet::new(SYNTHETIC_8, points)?,
        pose,
    })
}

/// All `classes x per_class` samples, class-major.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    let mut out = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        for index in 0..cfg.per_class {
            out.push(sample(cfg, class, index)?);
        }
    }
    Ok(out)
}

/// The neutral face at the canvas center, unrotated and unscaled.
pub fn neutral_landmarks(canvas: usize) -> LandmarkSet {
    let c = canvas as f64 / 2.0;
    let points = FaceParams::NEUTRAL
        .landmarks()
        .iter()
        .map(|p| Point::new(p.x + c, p.y + c))
        .collect();
    LandmarkSet::new(SYNTHETIC_8, points).expect("eight finite points")
}

pub fn neutral_image(canvas: usize) -> Image {
    let c = canvas as f64 / 2.0;
    let pose = SimilarityTransform::new(1.0, 0.0, c, c).expect("unit scale");
    render(&FaceParams::NEUTRAL, &pose, canvas, 0.0, &mut stream(0, &[]))
}

/// Writes PNGs, one shared annotation file and `manifest.tsv` under `dir`.
/// `splits` optionally assigns a split per sample id.
pub fn write_dataset(samples: &[SynthSample], dir: &Path, splits: &BTreeMap<String, Split>) -> Result<Dataset> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| GestaltError::io(&images, e))?;
    let mut annotations = String::from("# image\tschema\tpoints\n");
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("images/{}.png", s.id);
        s.image.save_png(&dir.join(&rel))?;
        annotations.push_str(&format_annotation(&rel, &s.landmarks));
        annotations.push('\n');
        records.push(SampleRecord {
            id: s.id.clone(),
            image: rel,
            landmarks: "landmarks.tsv".into(),
            label: s.label.clone(),
            cohort: None,
            split: splits.get(&s.id).copied(),
        });
    }
    let lm_path = dir.join("landmarks.tsv");
    fs::write(&lm_path, annotations).map_err(|e| GestaltError::io(&lm_path, e))?;
    let mut classes: Vec<String> = samples.iter().map(|s| s.label.clone()).collect();
    classes.sort();
    classes.dedup();
    let dataset = Dataset::new(dir.to_path_buf(), records, Some(classes))?;
    dataset.write(&dir.join("manifest.tsv"))?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::{estimate_alignment, generate_regions, RegionSpec};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::syndromes(3, 2, 11);
        assert_eq!(sample(&cfg, 1, 1).unwrap(), sample(&cfg, 1, 1).unwrap());
        let other = SynthConfig { seed: 12, ..cfg.clone() };
        assert_ne!(sample(&cfg, 1, 1).unwrap().image, sample(&other, 1, 1).unwrap().image);
    }

    #[test]
    fn identities_and_syndromes_use_separate_prototypes() {
        let a = class_offsets(&SynthConfig::syndromes(2, 1, 3), 0);
        let b = class_offsets(&SynthConfig::identities(2, 1, 3), 0);
        assert_ne!(a, b);
    }

    #[test]
    fn noise_free_landmarks_follow_pose() {
        let cfg = SynthConfig {
            landmark_noise: 0.0,
            ..SynthConfig::syndromes(2, 1, 5)
        };
        let s = sample(&cfg, 0, 0).unwrap();
        let params = FaceParams::from_offsets(&{
            let mut rng = stream(cfg.seed, &[cfg.kind.tag(), str_id("sample"), 0, 0]);
            let mut o = class_offsets(&cfg, 0);
            for v in &mut o {
                *v += uniform(&mut rng, cfg.spread);
            }
            o
        });
        let face = LandmarkSet::new(SYNTHETIC_8, params.landmarks().to_vec()).unwrap();
        let t = estimate_alignment(&face, &s.landmarks).unwrap();
        assert!((t.scale - s.pose.scale).abs() < 1e-9);
        assert!((t.rotation - s.pose.rotation).abs() < 1e-9);
    }

    #[test]
    fn neutral_face_yields_six_crops() {
        let img = neutral_image(128);
        let crops = generate_regions(&img, &neutral_landmarks(128), &RegionSpec::defaults()).unwrap();
        assert_eq!(crops.len(), 6);
        for c in &crops {
            assert_eq!(c.side(), 100);
            assert!(c.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn pupils_are_dark_and_sclera_bright() {
        let img = neutral_image(128);
        let lm = neutral_landmarks(128);
        let eye = lm.points()[0];
        assert!(img.get(eye.x as usize, eye.y as usize, 0) < 0.3);
        let side = img.get((eye.x + 4.0) as usize, eye.y as usize, 0);
        assert!(side > 0.8, "sclera {side}");
    }

    #[test]
    fn write_dataset_round_trips_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate(&SynthConfig::syndromes(2, 2, 1)).unwrap();
        let ds = write_dataset(&samples, dir.path(), &BTreeMap::new()).unwrap();
        let loaded = Dataset::load(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded.records(), ds.records());
        assert_eq!(loaded.classes(), ["syndrome-00", "syndrome-01"]);
        assert!(Image::load(&dir.path().join(&ds.records()[0].image)).is_ok());
    }
}
