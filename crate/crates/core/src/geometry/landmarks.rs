use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;

/// Converts a 1-indexed iBUG landmark range (as written in configs and
/// documentation) to 0-indexed positions.
pub fn one_based(range: RangeInclusive<usize>) -> Vec<usize> {
    range.map(|i| i - 1).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The 68 iBUG facial landmarks of one face, in pixel coordinates of some
/// image frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: [Point; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn new(points: &[Point]) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidLandmarks(format!(
                "expected {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        if let Some((i, p)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::InvalidLandmarks(format!(
                "point {} is not finite: ({}, {})",
                i + 1,
                p.x,
                p.y
            )));
        }
        let mut arr = [Point::default(); NUM_LANDMARKS];
        arr.copy_from_slice(points);
        let set = Self { points: arr };
        let (l, r) = set.eye_centers();
        if l == r {
            return Err(Error::DegenerateLandmarks);
        }
        Ok(set)
    }

    pub fn points(&self) -> &[Point; NUM_LANDMARKS] {
        &self.points
    }

    /// Zero-based access.
    pub fn point(&self, idx: usize) -> Point {
        self.points[idx]
    }

    /// Centers of the image-left (points 37-42) and image-right (43-48) eyes.
    pub fn eye_centers(&self) -> (Point, Point) {
        let mean = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let (sx, sy) = self.points[r]
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
            Point::new(sx / n, sy / n)
        };
        (mean(36..42), mean(42..48))
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        let mut points = self.points;
        for p in points.iter_mut() {
            *p = f(*p);
        }
        Self { points }
    }

    /// Parses the sidecar format: 68 lines of `x,y`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::with_capacity(NUM_LANDMARKS);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (x, y) = line.split_once(',').ok_or_else(|| {
                Error::InvalidLandmarks(format!("line {}: expected `x,y`", lineno + 1))
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidLandmarks(format!("line {}: {e}", lineno + 1))
                })
            };
            points.push(Point::new(parse(x)?, parse(y)?));
        }
        Self::new(&points)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(NUM_LANDMARKS * 16);
        for p in &self.points {
            let _ = writeln!(out, "{},{}", p.x, p.y);
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Euclidean norm of the 136-dimensional coordinate difference. Both sets
/// must live in the same frame (normally crop coordinates).
pub fn landmark_distance(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points
        .iter()
        .zip(b.points.iter())
        .map(|(p, q)| {
            let dx = p.x - q.x;
            let dy = p.y - q.y;
            dx * dx + dy * dy
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A plausible frontal face with eye centers at (40,60) and (80,60).
    pub(crate) fn frontal() -> LandmarkSet {
        let mut pts = Vec::with_capacity(68);
        for i in 0..17 {
            let t = std::f64::consts::PI * i as f64 / 16.0;
            pts.push(Point::new(60.0 - 45.0 * t.cos(), 65.0 + 50.0 * t.sin()));
        }
        for i in 0..10 {
            let x = 30.0 + 6.0 * i as f64 + if i >= 5 { 4.0 } else { 0.0 };
            pts.push(Point::new(x, 48.0));
        }
        for i in 0..4 {
            pts.push(Point::new(60.0, 58.0 + 6.0 * i as f64));
        }
        for i in 0..5 {
            pts.push(Point::new(52.0 + 4.0 * i as f64, 80.0));
        }
        for center in [40.0, 80.0] {
            let offs = [(-8.0, 0.0), (-4.0, -3.0), (4.0, -3.0), (8.0, 0.0), (4.0, 3.0), (-4.0, 3.0)];
            for (dx, dy) in offs {
                pts.push(Point::new(center + dx, 60.0 + dy));
            }
        }
        for i in 0..12 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 12.0;
            pts.push(Point::new(60.0 - 14.0 * t.cos(), 95.0 + 6.0 * t.sin()));
        }
        for i in 0..8 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
            pts.push(Point::new(60.0 - 9.0 * t.cos(), 95.0 + 3.0 * t.sin()));
        }
        LandmarkSet::new(&pts).unwrap()
    }

    #[test]
    fn eye_centers_of_frontal_face() {
        let (l, r) = frontal().eye_centers();
        assert!((l.x - 40.0).abs() < 1e-12 && (l.y - 60.0).abs() < 1e-12);
        assert!((r.x - 80.0).abs() < 1e-12 && (r.y - 60.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_count_and_nan() {
        assert!(LandmarkSet::new(&[Point::new(0.0, 0.0); 67]).is_err());
        let mut pts = frontal().points().to_vec();
        pts[3].x = f64::NAN;
        assert!(matches!(LandmarkSet::new(&pts), Err(Error::InvalidLandmarks(_))));
    }

    #[test]
    fn coincident_eyes_are_degenerate() {
        let pts = vec![Point::new(5.0, 5.0); 68];
        assert!(matches!(LandmarkSet::new(&pts), Err(Error::DegenerateLandmarks)));
    }

    #[test]
    fn text_round_trip() {
        let a = frontal();
        assert_eq!(LandmarkSet::parse(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn distance_examples() {
        let a = frontal();
        assert_eq!(landmark_distance(&a, &a), 0.0);
        let b = a.map(|p| Point::new(p.x + 3.0, p.y + 4.0));
        let expected = 5.0 * 68f64.sqrt();
        assert!((landmark_distance(&a, &b) - expected).abs() < 1e-9);
        assert_eq!(landmark_distance(&a, &b), landmark_distance(&b, &a));
    }

    #[test]
    fn one_based_ranges() {
        assert_eq!(one_based(18..=68).len(), 51);
        assert_eq!(one_based(37..=48)[0], 36);
    }
}
