//! Image degradations for robustness runs: JPEG round trip, down/up
//! resampling, additive Gaussian noise, and substitution of frames that were
//! transcoded by an external tool.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, ImageReader};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::FaceImage;

#[derive(Clone, Debug, PartialEq)]
pub enum DegradationSpec {
    None,
    Jpeg(u8),
    Downsample(usize),
    GaussianNoise { sigma: f64, seed: u64 },
    /// Frames prepared elsewhere (for example heavy video compression),
    /// stored under a directory named by the tag.
    ExternalFrames(String),
}

impl DegradationSpec {
    pub const JPEG_20: DegradationSpec = DegradationSpec::Jpeg(20);
    pub const DOWNSAMPLE_4: DegradationSpec = DegradationSpec::Downsample(4);
    pub const NOISE_5: DegradationSpec = DegradationSpec::GaussianNoise { sigma: 5.0, seed: 0 };

    pub fn validate(&self) -> Result<()> {
        match self {
            DegradationSpec::Jpeg(q) if !(1..=100).contains(q) => {
                Err(Error::InvalidConfig(format!("jpeg quality must be in 1..=100, got {q}")))
            }
            DegradationSpec::Downsample(f) if *f < 2 => {
                Err(Error::InvalidConfig(format!("downsample factor must be at least 2, got {f}")))
            }
            DegradationSpec::GaussianNoise { sigma, .. } if !(sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::InvalidConfig(format!("noise sigma must be positive, got {sigma}")))
            }
            DegradationSpec::ExternalFrames(tag) if tag.is_empty() => {
                Err(Error::InvalidConfig("external frame tag must not be empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Same kind with a different noise seed; other kinds are unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            DegradationSpec::GaussianNoise { sigma, .. } => DegradationSpec::GaussianNoise { sigma: *sigma, seed },
            other => other.clone(),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationSpec::None => write!(f, "none"),
            DegradationSpec::Jpeg(q) => write!(f, "jpeg:{q}"),
            DegradationSpec::Downsample(k) => write!(f, "resize:{k}"),
            DegradationSpec::GaussianNoise { sigma, seed } => write!(f, "noise:{sigma}:{seed}"),
            DegradationSpec::ExternalFrames(tag) => write!(f, "external:{tag}"),
        }
    }
}

/// Accepts `none`, `jpeg:Q`, `resize:F`, `noise:SIGMA[:SEED]` and
/// `external:TAG`.
impl FromStr for DegradationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad degradation `{s}`"));
        let mut parts = s.splitn(3, ':');
        let kind = parts.next().unwrap_or_default();
        let a = parts.next();
        let b = parts.next();
        let spec = match (kind, a, b) {
            ("none", None, None) => DegradationSpec::None,
            ("jpeg", Some(q), None) => DegradationSpec::Jpeg(q.parse().map_err(|_| bad())?),
            ("resize" | "downsample", Some(k), None) => DegradationSpec::Downsample(k.parse().map_err(|_| bad())?),
            ("noise", Some(sigma), seed) => DegradationSpec::GaussianNoise {
                sigma: sigma.parse().map_err(|_| bad())?,
                seed: seed.map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(0),
            },
            ("external", Some(tag), None) => DegradationSpec::ExternalFrames(tag.to_string()),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Applies `spec`. External frames cannot be produced here; see
/// [`substitute_external`].
pub fn degrade(image: &FaceImage, spec: &DegradationSpec) -> Result<FaceImage> {
    spec.validate()?;
    let out = match spec {
        DegradationSpec::None => return Ok(image.clone()),
        DegradationSpec::Jpeg(q) => jpeg_round_trip(image, *q)?,
        DegradationSpec::Downsample(f) => downsample(image, *f)?,
        DegradationSpec::GaussianNoise { sigma, seed } => add_noise(image, *sigma, *seed),
        DegradationSpec::ExternalFrames(_) => return Err(Error::ExternalFrameRequired),
    };
    Ok(out.with_transform(spec.to_string()))
}

/// Where the externally degraded copy of `image_path` lives: the same
/// relative path under `root/<tag>/`.
pub fn external_frame_path(root: &Path, tag: &str, image_path: &str) -> PathBuf {
    root.join(tag).join(image_path)
}

/// Replaces `original` by an externally degraded frame of the same size.
pub fn substitute_external(original: &FaceImage, frame: FaceImage) -> Result<FaceImage> {
    if frame.dims() != original.dims() {
        return Err(Error::DimMismatch {
            expected: original.dims(),
            actual: frame.dims(),
        });
    }
    Ok(frame)
}

fn jpeg_round_trip(image: &FaceImage, quality: u8) -> Result<FaceImage> {
    let rgb = image.to_rgb8();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .map_err(|e| Error::CodecFailure(e.to_string()))?;
    let decoded = ImageReader::with_format(Cursor::new(buf), ImageFormat::Jpeg)
        .decode()
        .map_err(|e| Error::CodecFailure(e.to_string()))?
        .to_rgb8();
    if decoded.dimensions() != rgb.dimensions() {
        return Err(Error::CodecFailure("decoded size differs".into()));
    }
    let mut out = FaceImage::from_rgb8(&decoded);
    out.provenance = image.provenance.clone();
    Ok(out)
}

fn add_noise(image: &FaceImage, sigma: f64, seed: u64) -> FaceImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 255.0) as f32;
    }
    out
}

/// Reflect index without repeating the edge sample: -1 -> 1, n -> n-2.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    if period == 0 {
        return 0;
    }
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn downsample(image: &FaceImage, f: usize) -> Result<FaceImage> {
    let (h, w) = image.dims();
    if f > h || f > w {
        return Err(Error::UnsupportedDims(format!(
            "factor {f} exceeds image size {w}x{h}"
        )));
    }
    let ph = h.div_ceil(f) * f;
    let pw = w.div_ceil(f) * f;
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let src = |x: usize, y: usize, c: usize| -> f32 {
        let sx = reflect(x as isize - left as isize, w);
        let sy = reflect(y as isize - top as isize, h);
        image.get(sx, sy, c)
    };

    let (sh, sw) = (ph / f, pw / f);
    let area = (f * f) as f32;
    let mut small = vec![0.0f32; sh * sw * 3];
    for r in 0..sh {
        for c in 0..sw {
            for ch in 0..3 {
                let mut acc = 0.0f32;
                for y in r * f..(r + 1) * f {
                    for x in c * f..(c + 1) * f {
                        acc += src(x, y, ch);
                    }
                }
                small[(r * sw + c) * 3 + ch] = acc / area;
            }
        }
    }

    // Bilinear upscale with pixel-center alignment and edge clamping,
    // evaluated only over the cropped-back window.
    let at = |x: usize, y: usize, ch: usize| small[(y * sw + x) * 3 + ch];
    let coord = |d: usize, n: usize| -> (usize, usize, f32) {
        let s = ((d as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let mut out = FaceImage::new(w, h);
    for y in 0..h {
        let (y0, y1, fy) = coord(y + top, sh);
        for x in 0..w {
            let (x0, x1, fx) = coord(x + left, sw);
            for ch in 0..3 {
                let t = at(x0, y0, ch) * (1.0 - fx) + at(x1, y0, ch) * fx;
                let b = at(x0, y1, ch) * (1.0 - fx) + at(x1, y1, ch) * fx;
                out.set(x, y, ch, (t * (1.0 - fy) + b * fy).clamp(0.0, 255.0));
            }
        }
    }
    out.provenance = image.provenance.clone();
    Ok(out)
}
