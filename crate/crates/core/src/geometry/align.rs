use serde::{Deserialize, Serialize};

use super::landmarks::{LandmarkSet, Point};
use crate::error::{Error, Result};
use crate::image::FaceImage;

/// Crop geometry: the inter-eye distance as a fraction of the output width,
/// and the square output size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub eye_dist_ratio: f64,
    pub output_size: usize,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            eye_dist_ratio: 0.27,
            output_size: 112,
        }
    }
}

/// Vertical position of the eye midpoint as a fraction of the crop height.
pub const EYE_LINE: f64 = 0.45;

/// Fraction of landmarks allowed to fall outside the source image.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.05;

impl CropSpec {
    pub fn new(eye_dist_ratio: f64, output_size: usize) -> Result<Self> {
        let spec = Self {
            eye_dist_ratio,
            output_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eye_dist_ratio > 0.0 && self.eye_dist_ratio < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "eye_dist_ratio must be in (0, 0.5), got {}",
                self.eye_dist_ratio
            )));
        }
        if self.output_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "output_size must be at least 16, got {}",
                self.output_size
            )));
        }
        Ok(())
    }

    pub fn eye_distance_px(&self) -> f64 {
        self.eye_dist_ratio * self.output_size as f64
    }

    /// Where the eye midpoint lands in the crop.
    pub fn canonical_midpoint(&self) -> Point {
        let s = self.output_size as f64;
        Point::new(0.5 * s, EYE_LINE * s)
    }
}

/// A 2-D similarity transform `p -> [a -b; b a] p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_parts(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        Self {
            a: scale * angle.cos(),
            b: scale * angle.sin(),
            tx,
            ty,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x - self.b * p.y + self.tx,
            self.b * p.x + self.a * p.y + self.ty,
        )
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn angle(&self) -> f64 {
        self.b.atan2(self.a)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Similarity) -> Similarity {
        Similarity {
            a: self.a * first.a - self.b * first.b,
            b: self.b * first.a + self.a * first.b,
            tx: self.a * first.tx - self.b * first.ty + self.tx,
            ty: self.b * first.tx + self.a * first.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Similarity {
        let det = self.a * self.a + self.b * self.b;
        let ia = self.a / det;
        let ib = -self.b / det;
        Similarity {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        }
    }

    /// Row-major 2x3 matrix.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }
}

/// The transform that puts the eye midpoint at the canonical crop position,
/// levels the eye axis and scales the inter-eye distance to
/// `eye_dist_ratio * output_size`.
pub fn alignment_transform(landmarks: &LandmarkSet, spec: &CropSpec) -> Result<Similarity> {
    let (left, right) = landmarks.eye_centers();
    let dx = right.x - left.x;
    let dy = right.y - left.y;
    let dist = dx.hypot(dy);
    if !(dist > 0.0) {
        return Err(Error::DegenerateLandmarks);
    }
    let scale = spec.eye_distance_px() / dist;
    let angle = -dy.atan2(dx);
    let rs = Similarity::from_parts(scale, angle, 0.0, 0.0);
    let mid = Point::new(0.5 * (left.x + right.x), 0.5 * (left.y + right.y));
    let moved = rs.apply(mid);
    let target = spec.canonical_midpoint();
    Ok(Similarity {
        tx: target.x - moved.x,
        ty: target.y - moved.y,
        ..rs
    })
}

/// Result of [`align_and_crop`].
#[derive(Clone, Debug)]
pub struct AlignedFace {
    pub image: FaceImage,
    pub landmarks: LandmarkSet,
    /// Source-to-crop transform.
    pub transform: Similarity,
}

/// Samples the source image at real-valued coordinates (pixel centers sit at
/// integer positions). Taps outside the image contribute 0.
#[inline]
pub fn bilinear(image: &FaceImage, sx: f64, sy: f64, out: &mut [f32; 3]) {
    let w = image.width() as isize;
    let h = image.height() as isize;
    let x0f = sx.floor();
    let y0f = sy.floor();
    let fx = (sx - x0f) as f32;
    let fy = (sy - y0f) as f32;
    let x0 = x0f as isize;
    let y0 = y0f as isize;
    let data = image.data();
    let tap = |x: isize, y: isize, c: usize| -> f32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            data[((y * w + x) as usize) * 3 + c]
        }
    };
    for (c, o) in out.iter_mut().enumerate() {
        let top = tap(x0, y0, c) * (1.0 - fx) + tap(x0 + 1, y0, c) * fx;
        let bottom = tap(x0, y0 + 1, c) * (1.0 - fx) + tap(x0 + 1, y0 + 1, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Aligns the face to the canonical eye geometry and resamples it into a
/// square crop. Landmarks are returned in crop coordinates.
pub fn align_and_crop(
    image: &FaceImage,
    landmarks: &LandmarkSet,
    spec: &CropSpec,
) -> Result<AlignedFace> {
    spec.validate()?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let outside = landmarks
        .points()
        .iter()
        .filter(|p| p.x < 0.0 || p.y < 0.0 || p.x > w - 1.0 || p.y > h - 1.0)
        .count();
    let total = landmarks.points().len();
    if outside as f64 > MAX_OUTSIDE_FRACTION * total as f64 {
        return Err(Error::OutOfBounds {
            outside,
            total,
            width: image.width(),
            height: image.height(),
        });
    }
    let clipped = if outside > 0 {
        landmarks.map(|p| Point::new(p.x.clamp(0.0, w - 1.0), p.y.clamp(0.0, h - 1.0)))
    } else {
        landmarks.clone()
    };

    let transform = alignment_transform(&clipped, spec)?;
    let inverse = transform.inverse();
    let n = spec.output_size;
    let mut out = FaceImage::new(n, n);
    let mut px = [0.0f32; 3];
    for r in 0..n {
        for c in 0..n {
            let src = inverse.apply(Point::new(c as f64, r as f64));
            bilinear(image, src.x, src.y, &mut px);
            for (ch, v) in px.iter().enumerate() {
                out.set(c, r, ch, *v);
            }
        }
    }
    out.provenance = image.provenance.clone();
    let out = out.with_transform(format!(
        "align(ratio={},size={})",
        spec.eye_dist_ratio, spec.output_size
    ));
    Ok(AlignedFace {
        image: out,
        landmarks: clipped.map(|p| transform.apply(p)),
        transform,
    })
}
