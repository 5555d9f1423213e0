//! Proper (reflection-free) 2-D similarity transforms and their
//! least-squares estimation from point correspondences.

use serde::{Deserialize, Serialize};

use super::landmarks::{LandmarkSet, Point};
use crate::error::{GestaltError, Result};
use crate::raster::Image;

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GestaltError::DegenerateGeometry(format!("scale {scale} must be > 0")));
        }
        Ok(Self {
            scale,
            rotation,
            tx,
            ty,
        })
    }

    /// Rotation by `angle` and scaling by `scale` about `center`.
    pub fn about(center: Point, scale: f64, angle: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        let rx = scale * (c * center.x - s * center.y);
        let ry = scale * (s * center.x + c * center.y);
        Self::new(scale, angle, center.x - rx, center.y - ry)
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point::new(
            self.scale * (c * p.x - s * p.y) + self.tx,
            self.scale * (s * p.x + c * p.y) + self.ty,
        )
    }

    pub fn inverse(&self) -> Self {
        let inv = 1.0 / self.scale;
        let (s, c) = (-self.rotation).sin_cos();
        Self {
            scale: inv,
            rotation: -self.rotation,
            tx: -inv * (c * self.tx - s * self.ty),
            ty: -inv * (s * self.tx + c * self.ty),
        }
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &Self) -> Self {
        let t = self.apply(Point::new(first.tx, first.ty));
        Self {
            scale: self.scale * first.scale,
            rotation: self.rotation + first.rotation,
            tx: t.x,
            ty: t.y,
        }
    }

    /// Rotation wrapped to `(-pi, pi]`.
    pub fn normalized_rotation(&self) -> f64 {
        let r = self.rotation.rem_euclid(std::f64::consts::TAU);
        if r > std::f64::consts::PI {
            r - std::f64::consts::TAU
        } else {
            r
        }
    }
}

/// Least-squares similarity mapping `landmarks` onto `canonical`.
///
/// Closed form: with both sets centered, the optimal `scale * (cos, sin)` is
/// `(sum p.q, sum p x q) / sum |p|^2`; translation maps centroid to centroid.
/// Reflections are excluded.
pub fn estimate_alignment(landmarks: &LandmarkSet, canonical: &LandmarkSet) -> Result<SimilarityTransform> {
    estimate_from_points(landmarks.points(), canonical.points())
}

pub fn estimate_from_points(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(GestaltError::DegenerateGeometry(format!(
            "{} source points vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 2 {
        return Err(GestaltError::DegenerateGeometry("need at least 2 points".into()));
    }
    let n = src.len() as f64;
    let mean = |ps: &[Point]| {
        let (x, y) = ps.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(x / n, y / n)
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut a, mut b, mut norm) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p.x - ms.x, p.y - ms.y);
        let (qx, qy) = (q.x - md.x, q.y - md.y);
        a += px * qx + py * qy;
        b += px * qy - py * qx;
        norm += px * px + py * py;
    }
    let dst_norm: f64 = dst
        .iter()
        .map(|q| (q.x - md.x).powi(2) + (q.y - md.y).powi(2))
        .sum();
    if norm <= f64::EPSILON * n || dst_norm <= f64::EPSILON * n || (a == 0.0 && b == 0.0) {
        return Err(GestaltError::DegenerateGeometry("landmarks coincide".into()));
    }
    let scale = a.hypot(b) / norm;
    let rotation = b.atan2(a);
    let (s, c) = rotation.sin_cos();
    SimilarityTransform::new(
        scale,
        rotation,
        md.x - scale * (c * ms.x - s * ms.y),
        md.y - scale * (s * ms.x + c * ms.y),
    )
}

/// Sum of squared distances between transformed `src` and `dst`.
pub fn residual(t: &SimilarityTransform, src: &[Point], dst: &[Point]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(p, q)| {
            let r = t.apply(*p);
            (r.x - q.x).powi(2) + (r.y - q.y).powi(2)
        })
        .sum()
}

/// Resamples `image` into the transform's target frame (same size as the
/// input). Each output pixel `q` reads the input at `T^-1(q)` with bilinear
/// interpolation; samples outside the input read 0.
pub fn apply_alignment(image: &Image, transform: &SimilarityTransform) -> Result<Image> {
    apply_alignment_into(image, transform, image.width(), image.height())
}

pub fn apply_alignment_into(
    image: &Image,
    transform: &SimilarityTransform,
    width: usize,
    height: usize,
) -> Result<Image> {
    if !(transform.scale > 0.0 && transform.scale.is_finite()) {
        return Err(GestaltError::DegenerateGeometry(format!(
            "scale {} must be > 0",
            transform.scale
        )));
    }
    if image.is_empty() || width == 0 || height == 0 {
        return Err(GestaltError::InvalidArgument("empty image".into()));
    }
    let inv = transform.inverse();
    let ch = image.channels();
    let mut data = vec![0.0f32; width * height * ch];
    for y in 0..height {
        for x in 0..width {
            let src = inv.apply(Point::new(x as f64, y as f64));
            // snap values within rounding noise of a pixel center
            let sx = snap(src.x);
            let sy = snap(src.y);
            for c in 0..ch {
                data[(y * width + x) * ch + c] = image.sample_bilinear(sx, sy, c);
            }
        }
    }
    Image::new(width, height, ch, data)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::landmarks::SYNTHETIC_8;

    fn canonical() -> LandmarkSet {
        LandmarkSet::new(
            SYNTHETIC_8,
            vec![
                Point::new(48.0, 52.0),
                Point::new(80.0, 52.0),
                Point::new(64.0, 72.0),
                Point::new(64.0, 90.0),
                Point::new(23.0, 60.0),
                Point::new(105.0, 60.0),
                Point::new(64.0, 114.0),
                Point::new(64.0, 29.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_sets_give_identity() {
        let t = estimate_alignment(&canonical(), &canonical()).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.tx.abs() < 1e-9 && t.ty.abs() < 1e-9);
    }

    #[test]
    fn rotation_about_centroid_is_undone() {
        let c = canonical();
        let rot = SimilarityTransform::about(c.centroid(), 1.0, 0.3).unwrap();
        let moved = c.map(|p| rot.apply(p));
        let t = estimate_alignment(&moved, &c).unwrap();
        assert!((t.rotation + 0.3).abs() < 1e-12);
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(residual(&t, moved.points(), c.points()) < 1e-9);
    }

    #[test]
    fn scale_and_shift_round_trip() {
        let c = canonical();
        let moved = c.map(|p| Point::new(2.0 * p.x + 10.0, 2.0 * p.y - 5.0));
        let t = estimate_alignment(&moved, &c).unwrap();
        assert!((t.scale - 0.5).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!((t.tx + 5.0).abs() < 1e-9 && (t.ty - 2.5).abs() < 1e-9);
        for (p, q) in moved.points().iter().zip(c.points()) {
            let r = t.apply(*p);
            assert!((r.x - q.x).abs() < 1e-9 && (r.y - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let same = LandmarkSet::new(SYNTHETIC_8, vec![Point::new(3.0, 3.0); 8]).unwrap();
        assert!(matches!(
            estimate_alignment(&same, &canonical()),
            Err(GestaltError::DegenerateGeometry(_))
        ));
        assert!(estimate_from_points(&[Point::new(0.0, 0.0)], &[Point::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = SimilarityTransform::new(1.7, -2.1, 13.0, -4.5).unwrap();
        let id = t.compose(&t.inverse());
        assert!((id.scale - 1.0).abs() < 1e-9);
        assert!(id.normalized_rotation().abs() < 1e-9);
        assert!(id.tx.abs() < 1e-9 && id.ty.abs() < 1e-9);
    }

    fn smooth(w: usize, h: usize) -> Image {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32, (i / w) as f32);
                0.5 + 0.25 * (x * 0.15).sin() * (y * 0.11).cos()
            })
            .collect();
        Image::gray(w, h, data).unwrap()
    }

    #[test]
    fn identity_and_integer_shift_resample_exactly() {
        let img = smooth(20, 16);
        assert_eq!(apply_alignment(&img, &SimilarityTransform::IDENTITY).unwrap(), img);
        let shift = SimilarityTransform::new(1.0, 0.0, 3.0, -2.0).unwrap();
        let out = apply_alignment(&img, &shift).unwrap();
        for y in 0..14 {
            for x in 3..20 {
                assert_eq!(out.get(x, y, 0), img.get(x - 3, y + 2, 0));
            }
        }
        assert_eq!(out.get(0, 0, 0), 0.0);
        assert_eq!(out.get(5, 15, 0), 0.0);
    }

    #[test]
    fn rotation_round_trip_stays_close_in_interior() {
        let img = smooth(64, 64);
        let c = Point::new(31.5, 31.5);
        let fwd = SimilarityTransform::about(c, 1.0, 0.2).unwrap();
        let back = SimilarityTransform::about(c, 1.0, -0.2).unwrap();
        let out = apply_alignment(&apply_alignment(&img, &fwd).unwrap(), &back).unwrap();
        for y in 16..48 {
            for x in 16..48 {
                assert!((out.get(x, y, 0) - img.get(x, y, 0)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let img = smooth(4, 4);
        let bad = SimilarityTransform {
            scale: 0.0,
            ..SimilarityTransform::IDENTITY
        };
        assert!(matches!(
            apply_alignment(&img, &bad),
            Err(GestaltError::DegenerateGeometry(_))
        ));
    }
}
