use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Named semantic anchors every schema must resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Anchor {
    LeftEyeCenter,
    RightEyeCenter,
    NoseTip,
    MouthCenter,
    LeftEar,
    RightEar,
    Chin,
    ForeheadLine,
}

impl Anchor {
    pub const ALL: [Anchor; 8] = [
        Anchor::LeftEyeCenter,
        Anchor::RightEyeCenter,
        Anchor::NoseTip,
        Anchor::MouthCenter,
        Anchor::LeftEar,
        Anchor::RightEar,
        Anchor::Chin,
        Anchor::ForeheadLine,
    ];
}

/// A landmark layout: point count plus, for every anchor, the indices whose
/// centroid defines it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkSchema {
    pub name: String,
    pub size: usize,
    pub anchors: BTreeMap<Anchor, Vec<usize>>,
}

pub const SYNTHETIC_8: &str = "synthetic-8";
pub const IBUG_68: &str = "ibug-68";

impl LandmarkSchema {
    /// Eight points, one per anchor, in [`Anchor::ALL`] order.
    pub fn synthetic8() -> Self {
        Self {
            name: SYNTHETIC_8.into(),
            size: 8,
            anchors: Anchor::ALL.iter().enumerate().map(|(i, &a)| (a, vec![i])).collect(),
        }
    }

    /// The common 68-point layout (jaw 0-16, brows 17-26, nose 27-35,
    /// eyes 36-47, mouth 48-67). It has no forehead points, so the brow
    /// centroid stands in for the forehead line and the jaw ends for the ears.
    pub fn ibug68() -> Self {
        let anchors = [
            (Anchor::LeftEyeCenter, (36..42).collect()),
            (Anchor::RightEyeCenter, (42..48).collect()),
            (Anchor::NoseTip, vec![30]),
            (Anchor::MouthCenter, vec![51, 57, 62, 66]),
            (Anchor::LeftEar, vec![0]),
            (Anchor::RightEar, vec![16]),
            (Anchor::Chin, vec![8]),
            (Anchor::ForeheadLine, (17..27).collect()),
        ]
        .into_iter()
        .collect();
        Self {
            name: IBUG_68.into(),
            size: 68,
            anchors,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            SYNTHETIC_8 => Ok(Self::synthetic8()),
            IBUG_68 => Ok(Self::ibug68()),
            other => Err(GestaltError::InvalidArgument(format!(
                "unknown landmark schema `{other}`"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in Anchor::ALL {
            match self.anchors.get(&a) {
                Some(idx) if !idx.is_empty() && idx.iter().all(|&i| i < self.size) => {}
                _ => {
                    return Err(GestaltError::InvalidArgument(format!(
                        "schema `{}` does not resolve anchor {a:?}",
                        self.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Landmark coordinates in pixel space, tagged with their schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    schema: String,
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(schema: &str, points: Vec<Point>) -> Result<Self> {
        let s = LandmarkSchema::by_name(schema)?;
        if points.len() != s.size {
            return Err(GestaltError::InvalidArgument(format!(
                "schema `{schema}` has {} points, got {}",
                s.size,
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GestaltError::InvalidArgument("non-finite landmark coordinate".into()));
        }
        Ok(Self {
            schema: schema.to_owned(),
            points,
        })
    }

    pub fn schema_name(&self) -> &str {
        &self.schema
    }

    pub fn schema(&self) -> LandmarkSchema {
        LandmarkSchema::by_name(&self.schema).expect("validated at construction")
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn anchor(&self, a: Anchor) -> Point {
        let schema = self.schema();
        let idx = &schema.anchors[&a];
        let n = idx.len() as f64;
        let (sx, sy) = idx
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &i| (sx + self.points[i].x, sy + self.points[i].y));
        Point::new(sx / n, sy / n)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            schema: self.schema.clone(),
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(sx / n, sy / n)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

impl fmt::Display for LandmarkSet {
    /// Space-separated `x0 y0 x1 y1 ...` with round-trip float formatting.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{} {}", p.x, p.y)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_schemas_resolve_all_anchors() {
        LandmarkSchema::synthetic8().validate().unwrap();
        LandmarkSchema::ibug68().validate().unwrap();
    }

    #[test]
    fn wrong_point_count_and_nan_are_rejected() {
        assert!(LandmarkSet::new(SYNTHETIC_8, vec![Point::default(); 7]).is_err());
        let mut pts = vec![Point::default(); 8];
        pts[3].y = f64::NAN;
        assert!(LandmarkSet::new(SYNTHETIC_8, pts).is_err());
        assert!(LandmarkSet::new("nope", vec![]).is_err());
    }

    #[test]
    fn anchors_are_index_centroids() {
        let pts: Vec<Point> = (0..68).map(|i| Point::new(i as f64, 0.0)).collect();
        let set = LandmarkSet::new(IBUG_68, pts).unwrap();
        assert_eq!(set.anchor(Anchor::LeftEyeCenter).x, 38.5);
        assert_eq!(set.anchor(Anchor::NoseTip).x, 30.0);
    }
}
