//! Landmark-anchored region crops.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::landmarks::{Anchor, LandmarkSet, Point};
use crate::error::{GestaltError, Result};
use crate::raster::Image;

pub const DEFAULT_CROP_SIDE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionTag {
    FullFace,
    Eyes,
    Nose,
    MiddleFace,
    UpperHalf,
    LowerHalf,
}

impl RegionTag {
    pub const ALL: [RegionTag; 6] = [
        RegionTag::Eyes,
        RegionTag::Nose,
        RegionTag::MiddleFace,
        RegionTag::UpperHalf,
        RegionTag::LowerHalf,
        RegionTag::FullFace,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionTag::FullFace => "full-face",
            RegionTag::Eyes => "eyes",
            RegionTag::Nose => "nose",
            RegionTag::MiddleFace => "middle-face",
            RegionTag::UpperHalf => "upper-half",
            RegionTag::LowerHalf => "lower-half",
        }
    }

    /// Human-readable row label for result tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            RegionTag::FullFace => "Full Face",
            RegionTag::Eyes => "Eyes",
            RegionTag::Nose => "Nose",
            RegionTag::MiddleFace => "Middle face (Ear to Ear)",
            RegionTag::UpperHalf => "Upper Half Face",
            RegionTag::LowerHalf => "Lower Half Face",
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionTag {
    type Err = GestaltError;

    fn from_str(s: &str) -> Result<Self> {
        RegionTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GestaltError::InvalidArgument(format!("unknown region `{s}`")))
    }
}

/// How the unexpanded box of a region is derived from landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "anchors", rename_all = "kebab-case")]
pub enum RegionRule {
    /// Bounding box of every landmark.
    AllLandmarks,
    /// Bounding box of the listed anchors.
    Anchors(Vec<Anchor>),
    /// Face box above the midline between the eye line and the mouth.
    UpperHalf,
    /// Face box below that midline.
    LowerHalf,
}

/// Expansion of the unexpanded box on each side, as fractions of the face
/// box width (left/right) or height (top/bottom).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Margins {
    pub const fn symmetric(horizontal: f64, vertical: f64) -> Self {
        Self {
            left: horizontal,
            right: horizontal,
            top: vertical,
            bottom: vertical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub tag: RegionTag,
    pub rule: RegionRule,
    pub margins: Margins,
    pub side: usize,
}

impl RegionSpec {
    pub fn default_for(tag: RegionTag) -> Self {
        let (rule, margins) = match tag {
            RegionTag::FullFace => (RegionRule::AllLandmarks, Margins::symmetric(0.08, 0.08)),
            RegionTag::Eyes => (
                RegionRule::Anchors(vec![Anchor::LeftEyeCenter, Anchor::RightEyeCenter]),
                Margins::symmetric(0.14, 0.10),
            ),
            RegionTag::Nose => (
                RegionRule::Anchors(vec![Anchor::NoseTip]),
                Margins {
                    left: 0.15,
                    right: 0.15,
                    top: 0.18,
                    bottom: 0.08,
                },
            ),
            RegionTag::MiddleFace => (
                RegionRule::Anchors(vec![Anchor::LeftEar, Anchor::RightEar, Anchor::NoseTip]),
                Margins::symmetric(0.04, 0.10),
            ),
            RegionTag::UpperHalf => (
                RegionRule::UpperHalf,
                Margins {
                    left: 0.05,
                    right: 0.05,
                    top: 0.05,
                    bottom: 0.0,
                },
            ),
            RegionTag::LowerHalf => (
                RegionRule::LowerHalf,
                Margins {
                    left: 0.05,
                    right: 0.05,
                    top: 0.0,
                    bottom: 0.05,
                },
            ),
        };
        Self {
            tag,
            rule,
            margins,
            side: DEFAULT_CROP_SIDE,
        }
    }

    pub fn defaults() -> Vec<Self> {
        RegionTag::ALL.iter().map(|&t| Self::default_for(t)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.margins;
        if [m.left, m.right, m.top, m.bottom].iter().any(|v| !(*v >= 0.0)) || self.side == 0 {
            return Err(GestaltError::InvalidArgument(format!(
                "region {}: margins must be >= 0 and side > 0",
                self.tag
            )));
        }
        if let RegionRule::Anchors(a) = &self.rule {
            if a.is_empty() {
                return Err(GestaltError::InvalidArgument(format!(
                    "region {}: empty anchor list",
                    self.tag
                )));
            }
        }
        Ok(())
    }

    /// Pixel box `(min, max)` of this region, clamped to the image.
    pub fn bounding_box(&self, landmarks: &LandmarkSet, width: usize, height: usize) -> Result<(Point, Point)> {
        self.validate()?;
        let (face_lo, face_hi) = landmarks.bounds();
        let fw = face_hi.x - face_lo.x;
        let fh = face_hi.y - face_lo.y;
        let midline = || {
            let eyes = (landmarks.anchor(Anchor::LeftEyeCenter).y
                + landmarks.anchor(Anchor::RightEyeCenter).y)
                / 2.0;
            (eyes + landmarks.anchor(Anchor::MouthCenter).y) / 2.0
        };
        let (lo, hi) = match &self.rule {
            RegionRule::AllLandmarks => (face_lo, face_hi),
            RegionRule::Anchors(anchors) => {
                let pts: Vec<Point> = anchors.iter().map(|&a| landmarks.anchor(a)).collect();
                let lo = pts.iter().fold(Point::new(f64::INFINITY, f64::INFINITY), |a, p| {
                    Point::new(a.x.min(p.x), a.y.min(p.y))
                });
                let hi = pts.iter().fold(Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| {
                    Point::new(a.x.max(p.x), a.y.max(p.y))
                });
                (lo, hi)
            }
            RegionRule::UpperHalf => (face_lo, Point::new(face_hi.x, midline())),
            RegionRule::LowerHalf => (Point::new(face_lo.x, midline()), face_hi),
        };
        let m = self.margins;
        let max_x = width.saturating_sub(1) as f64;
        let max_y = height.saturating_sub(1) as f64;
        let lo = Point::new(
            (lo.x - m.left * fw).clamp(0.0, max_x),
            (lo.y - m.top * fh).clamp(0.0, max_y),
        );
        let hi = Point::new(
            (hi.x + m.right * fw).clamp(0.0, max_x),
            (hi.y + m.bottom * fh).clamp(0.0, max_y),
        );
        if !(hi.x - lo.x > 0.0 && hi.y - lo.y > 0.0) {
            return Err(GestaltError::DegenerateGeometry(format!(
                "region {} spans a zero-area box",
                self.tag
            )));
        }
        Ok((lo, hi))
    }
}

/// One aligned grayscale crop, `side x side`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCrop {
    pub tag: RegionTag,
    pub pixels: Image,
}

impl RegionCrop {
    pub fn new(tag: RegionTag, pixels: Image) -> Result<Self> {
        if pixels.channels() != 1 || pixels.width() != pixels.height() || pixels.is_empty() {
            return Err(GestaltError::ShapeMismatch(format!(
                "crop must be square single-channel, got {}x{}x{}",
                pixels.width(),
                pixels.height(),
                pixels.channels()
            )));
        }
        Ok(Self { tag, pixels })
    }

    pub fn side(&self) -> usize {
        self.pixels.width()
    }
}

/// Cuts one crop per spec out of an aligned image. Landmarks are clamped into
/// the image first.
pub fn generate_regions(
    aligned_image: &Image,
    aligned_landmarks: &LandmarkSet,
    specs: &[RegionSpec],
) -> Result<Vec<RegionCrop>> {
    specs
        .iter()
        .map(|s| generate_region(aligned_image, aligned_landmarks, s))
        .collect()
}

pub fn generate_region(image: &Image, landmarks: &LandmarkSet, spec: &RegionSpec) -> Result<RegionCrop> {
    if image.is_empty() {
        return Err(GestaltError::InvalidArgument("empty image".into()));
    }
    let gray = image.to_grayscale();
    let (w, h) = (gray.width(), gray.height());
    let clamped = landmarks.map(|p| {
        Point::new(
            p.x.clamp(0.0, w.saturating_sub(1) as f64),
            p.y.clamp(0.0, h.saturating_sub(1) as f64),
        )
    });
    let (lo, hi) = spec.bounding_box(&clamped, w, h)?;
    let side = spec.side;
    let step = |extent: f64| if side > 1 { extent / (side - 1) as f64 } else { 0.0 };
    let (sx, sy) = (step(hi.x - lo.x), step(hi.y - lo.y));
    let mut data = Vec::with_capacity(side * side);
    for j in 0..side {
        let y = if side > 1 { lo.y + j as f64 * sy } else { (lo.y + hi.y) / 2.0 };
        for i in 0..side {
            let x = if side > 1 { lo.x + i as f64 * sx } else { (lo.x + hi.x) / 2.0 };
            data.push(gray.sample_bilinear(x, y, 0).clamp(0.0, 1.0));
        }
    }
    RegionCrop::new(spec.tag, Image::gray(side, side, data)?)
}
