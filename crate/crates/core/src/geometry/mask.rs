use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::landmarks::{one_based, LandmarkSet, Point};
use crate::error::{Error, Result};
use crate::image::FaceImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    NoMask,
    /// Convex hull of both eyes (points 37-48).
    EyeMask,
    /// Convex hull of the inner face (points 18-68).
    HullMask,
    /// Disks around all 68 points.
    UniteMask,
    /// Disks around the 51 inner-face points (18-68).
    InnerMask,
}

impl MaskType {
    pub const ALL: [MaskType; 5] = [
        MaskType::NoMask,
        MaskType::EyeMask,
        MaskType::HullMask,
        MaskType::UniteMask,
        MaskType::InnerMask,
    ];

    /// Zero-based landmark indices the mask is built from.
    pub fn subset(self) -> Vec<usize> {
        match self {
            MaskType::NoMask => Vec::new(),
            MaskType::EyeMask => one_based(37..=48),
            MaskType::HullMask | MaskType::InnerMask => one_based(18..=68),
            MaskType::UniteMask => one_based(1..=68),
        }
    }

    pub fn is_hull(self) -> bool {
        matches!(self, MaskType::EyeMask | MaskType::HullMask)
    }

    pub fn is_pointwise(self) -> bool {
        matches!(self, MaskType::UniteMask | MaskType::InnerMask)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskType::NoMask => "none",
            MaskType::EyeMask => "eye",
            MaskType::HullMask => "hull",
            MaskType::UniteMask => "unite",
            MaskType::InnerMask => "inner",
        }
    }
}

impl fmt::Display for MaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown mask type `{s}` (expected none, eye, hull, unite or inner)"
                ))
            })
    }
}

/// Declarative mask recipe. The landmark subset is implied by the type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mask_type: MaskType,
    pub radius_k: u32,
}

pub const DEFAULT_RADIUS: u32 = 13;

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            mask_type: MaskType::InnerMask,
            radius_k: DEFAULT_RADIUS,
        }
    }
}

impl MaskSpec {
    pub fn new(mask_type: MaskType, radius_k: u32) -> Self {
        Self { mask_type, radius_k }
    }

    pub fn none() -> Self {
        Self::new(MaskType::NoMask, DEFAULT_RADIUS)
    }

    pub fn validate(&self, output_size: usize) -> Result<()> {
        if self.radius_k < 1 || self.radius_k as usize > output_size / 2 {
            return Err(Error::InvalidConfig(format!(
                "radius_k must be in 1..={}, got {}",
                output_size / 2,
                self.radius_k
            )));
        }
        Ok(())
    }
}

/// Per-pixel mask; `true` marks an eliminated pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    grid: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            grid: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            grid: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                m.grid[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.grid[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.grid[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.grid.iter().zip(&other.grid).all(|(&a, &b)| !a || b)
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, &b) in self.grid.iter_mut().zip(&other.grid) {
            *a |= b;
        }
    }

    /// 8-bit grayscale rendering, 255 = masked.
    pub fn to_gray8(&self) -> image::GrayImage {
        let raw = self.grid.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }
}

/// Rasterizes a mask over an `H x W` crop. Pixel centers sit at integer
/// coordinates `(c, r)`.
pub fn build_mask(spec: &MaskSpec, landmarks: &LandmarkSet, dims: (usize, usize)) -> Result<BinaryMask> {
    let (h, w) = dims;
    let points: Vec<Point> = spec
        .mask_type
        .subset()
        .into_iter()
        .map(|i| landmarks.point(i))
        .collect();
    match spec.mask_type {
        MaskType::NoMask => Ok(BinaryMask::empty(h, w)),
        MaskType::UniteMask | MaskType::InnerMask => {
            Ok(rasterize_disks(&points, spec.radius_k as f64, dims))
        }
        MaskType::EyeMask | MaskType::HullMask => {
            if points.len() < 3 {
                return Err(Error::EmptySubset(points.len()));
            }
            Ok(hull_mask(&points, dims))
        }
    }
}

/// Union of closed disks of `radius` around `points`.
pub fn rasterize_disks(points: &[Point], radius: f64, (h, w): (usize, usize)) -> BinaryMask {
    let mut mask = BinaryMask::empty(h, w);
    let r2 = radius * radius;
    for p in points {
        let Some((c0, c1)) = index_span(p.x - radius, p.x + radius, w) else {
            continue;
        };
        let Some((r0, r1)) = index_span(p.y - radius, p.y + radius, h) else {
            continue;
        };
        for r in r0..=r1 {
            let dy = r as f64 - p.y;
            for c in c0..=c1 {
                let dx = c as f64 - p.x;
                if dx * dx + dy * dy <= r2 {
                    mask.set(r, c, true);
                }
            }
        }
    }
    mask
}

/// Integer indices in `[lo, hi]`, padded by one on each side against
/// rounding, clipped to `0..len`.
fn index_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let (lo, hi) = (lo - 1.0, hi + 1.0);
    let first = lo.ceil().max(0.0);
    let last = hi.floor().min((len - 1) as f64);
    (first <= last).then(|| (first as usize, last as usize))
}

/// Convex hull by Andrew's monotone chain, counter-clockwise in a y-up
/// sense, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    cross(a, b, p) == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn hull_mask(points: &[Point], (h, w): (usize, usize)) -> BinaryMask {
    let hull = convex_hull(points);
    let mut mask = BinaryMask::empty(h, w);
    if hull.is_empty() {
        return mask;
    }
    let min_x = hull.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = hull.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = hull.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = hull.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let (Some((c0, c1)), Some((r0, r1))) = (index_span(min_x, max_x, w), index_span(min_y, max_y, h)) else {
        return mask;
    };
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = Point::new(c as f64, r as f64);
            let inside = match hull.len() {
                1 => p == hull[0],
                2 => on_segment(hull[0], hull[1], p),
                n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0),
            };
            if inside {
                mask.set(r, c, true);
            }
        }
    }
    mask
}

/// Sets masked pixels to 0 in every channel; other pixels are untouched.
pub fn apply_mask(image: &FaceImage, mask: &BinaryMask) -> Result<FaceImage> {
    if mask.dims() != image.dims() {
        return Err(Error::DimMismatch {
            expected: image.dims(),
            actual: mask.dims(),
        });
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for (i, &m) in mask.grid.iter().enumerate() {
        if m {
            data[i * 3..i * 3 + 3].fill(0.0);
        }
    }
    Ok(out)
}
