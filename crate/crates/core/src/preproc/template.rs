//! Canonical landmark template from generalized Procrustes analysis.

use super::landmarks::{LandmarkSet, Point};
use super::transform::estimate_from_points;
use crate::error::{GestaltError, Result};

/// Template plus the frame (image size) it is placed in.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTemplate {
    pub landmarks: LandmarkSet,
    pub width: usize,
    pub height: usize,
}

const GPA_ITERS: usize = 20;

fn normalize(points: &[Point]) -> Vec<Point> {
    let n = points.len() as f64;
    let (cx, cy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (cx / n, cy / n);
    let norm = points
        .iter()
        .map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2))
        .sum::<f64>()
        .sqrt();
    points
        .iter()
        .map(|p| Point::new((p.x - cx) / norm, (p.y - cy) / norm))
        .collect()
}

/// Mean shape of `sets` after iterative similarity alignment, scaled so its
/// bounding box fills `fill` of the `width x height` frame and centered in it.
/// The first set fixes the template's orientation.
pub fn build_template(sets: &[LandmarkSet], width: usize, height: usize, fill: f64) -> Result<CanonicalTemplate> {
    let first = sets
        .first()
        .ok_or_else(|| GestaltError::InvalidArgument("no landmark sets for template".into()))?;
    if sets.iter().any(|s| s.schema_name() != first.schema_name()) {
        return Err(GestaltError::InvalidArgument("mixed landmark schemas".into()));
    }
    if !(fill > 0.0 && fill <= 1.0) || width == 0 || height == 0 {
        return Err(GestaltError::InvalidArgument("template frame must be non-empty with fill in (0, 1]".into()));
    }
    let reference = normalize(first.points());
    if reference.iter().any(|p| !p.x.is_finite()) {
        return Err(GestaltError::DegenerateGeometry("reference landmarks coincide".into()));
    }
    let mut mean = reference.clone();
    for _ in 0..GPA_ITERS {
        let mut acc = vec![Point::default(); mean.len()];
        for s in sets {
            let t = estimate_from_points(s.points(), &mean)?;
            for (a, p) in acc.iter_mut().zip(s.points()) {
                let q = t.apply(*p);
                a.x += q.x;
                a.y += q.y;
            }
        }
        let k = sets.len() as f64;
        let avg: Vec<Point> = acc.iter().map(|p| Point::new(p.x / k, p.y / k)).collect();
        // re-anchor the orientation to the reference to stop drift
        let t = estimate_from_points(&avg, &reference)?;
        let next = normalize(&avg.iter().map(|p| t.apply(*p)).collect::<Vec<_>>());
        let change: f64 = next
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum();
        mean = next;
        if change < 1e-24 {
            break;
        }
    }
    let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &mean {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let scale = (fill * width as f64 / (hi.x - lo.x)).min(fill * height as f64 / (hi.y - lo.y));
    let (cx, cy) = ((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let (fx, fy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let placed = mean
        .iter()
        .map(|p| Point::new(fx + scale * (p.x - cx), fy + scale * (p.y - cy)))
        .collect();
    Ok(CanonicalTemplate {
        landmarks: LandmarkSet::new(first.schema_name(), placed)?,
        width,
        height,
    })
}
