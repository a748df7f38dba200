use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, IdentityEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{align_and_crop, LandmarkSet};
use crate::image::FaceImage;
use crate::verification::cosine_distance;

pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_STRIDE: usize = 8;
pub const DEFAULT_FILL: f32 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub stride: usize,
    /// Row-major, one value per occluder position: cosine distance between
    /// the occluded and the unoccluded embedding.
    pub values: Vec<f64>,
    /// Distance from the unoccluded embedding to the reference, when one was
    /// given.
    pub reference_distance: Option<f64>,
}

impl SaliencyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// `(row, col)` of the largest value; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Raw values, one grid row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Heatmap over a `size x size` crop, each occluder cell drawn at its
    /// stride footprint and shaded relative to this map's own maximum.
    pub fn to_svg(&self, size: usize) -> String {
        let max = self.values.iter().copied().fold(0.0f64, f64::max);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n<rect width=\"100%\" height=\"100%\" fill=\"black\"/>\n",
            s = size
        );
        for r in 0..self.rows {
            for c in 0..self.cols {
                let t = if max > 0.0 { self.get(r, c) / max } else { 0.0 };
                let red = (255.0 * t).round() as u8;
                let blue = (255.0 * (1.0 - t)).round() as u8;
                let offset = (self.patch - self.stride) as f64 / 2.0;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"rgb({red},0,{blue})\"><title>{}</title></rect>",
                    c as f64 * self.stride as f64 + offset,
                    r as f64 * self.stride as f64 + offset,
                    self.stride,
                    self.stride,
                    self.get(r, c)
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Occlusion saliency on the aligned crop. Each occluder overwrites a
/// `patch x patch` square with `fill` before the model's mask is applied,
/// so occluding an already masked region leaves the input unchanged.
pub fn occlusion_saliency(
    model: &(impl Embedder + ?Sized),
    image: &FaceImage,
    landmarks: &LandmarkSet,
    reference: Option<&IdentityEmbedding>,
    patch: usize,
    stride: usize,
    fill: f32,
) -> Result<SaliencyMap> {
    let pre = model.preprocess();
    let aligned = align_and_crop(image, landmarks, &pre.crop)?;
    let (h, w) = aligned.image.dims();
    if patch == 0 || stride == 0 || patch > w.min(h) {
        return Err(Error::InvalidConfig(format!(
            "occluder patch {patch} with stride {stride} does not fit a {w}x{h} crop"
        )));
    }
    let embed = |crop: &FaceImage| model.embed_input(&pre.mask_crop(crop, &aligned.landmarks)?);
    let baseline = embed(&aligned.image)?;
    let rows = (h - patch) / stride + 1;
    let cols = (w - patch) / stride + 1;
    let values = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (y0, x0) = ((i / cols) * stride, (i % cols) * stride);
            let mut occluded = aligned.image.clone();
            for y in y0..y0 + patch {
                for x in x0..x0 + patch {
                    for c in 0..3 {
                        occluded.set(x, y, c, fill);
                    }
                }
            }
            Ok(cosine_distance(&embed(&occluded)?, &baseline))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SaliencyMap {
        rows,
        cols,
        patch,
        stride,
        values,
        reference_distance: reference.map(|r| cosine_distance(&baseline, r)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingModel, LossConfig, ModelConfig};
    use crate::geometry::landmarks_tests::frontal;
    use crate::geometry::{build_mask, CropSpec, MaskSpec, MaskType, Point, Preprocess};

    struct Constant(Preprocess);

    impl Embedder for Constant {
        fn preprocess(&self) -> &Preprocess {
            &self.0
        }
        fn embed_input(&self, _: &FaceImage) -> Result<IdentityEmbedding> {
            IdentityEmbedding::from_raw(&[0.6, 0.8])
        }
    }

    /// Reads only crop rows `BAND`, like a model whose identity cue is a
    /// forehead band.
    struct Forehead(Preprocess);

    const BAND: std::ops::Range<usize> = 16..40;

    impl Embedder for Forehead {
        fn preprocess(&self) -> &Preprocess {
            &self.0
        }
        fn embed_input(&self, crop: &FaceImage) -> Result<IdentityEmbedding> {
            let mut s = 0.0f64;
            for y in BAND {
                for x in 0..crop.width() {
                    s += crop.get(x, y, 1) as f64;
                }
            }
            IdentityEmbedding::from_raw(&[1.0, s / 1e5])
        }
    }

    fn face() -> (FaceImage, LandmarkSet) {
        let lms = frontal().map(|p| Point::new(p.x + 40.0, p.y + 40.0));
        (FaceImage::filled(200, 200, 150.0), lms)
    }

    fn no_mask() -> Preprocess {
        Preprocess {
            crop: CropSpec::default(),
            mask: MaskSpec::none(),
        }
    }

    #[test]
    fn grid_dims() {
        let (img, lms) = face();
        let m = occlusion_saliency(&Constant(no_mask()), &img, &lms, None, 16, 8, 0.0).unwrap();
        assert_eq!((m.rows, m.cols), ((112 - 16) / 8 + 1, (112 - 16) / 8 + 1));
        let m = occlusion_saliency(&Constant(no_mask()), &img, &lms, None, 20, 7, 0.0).unwrap();
        assert_eq!((m.rows, m.cols), (14, 14));
        assert!(occlusion_saliency(&Constant(no_mask()), &img, &lms, None, 113, 8, 0.0).is_err());
    }

    #[test]
    fn constant_model_gives_zero_map() {
        let (img, lms) = face();
        let r = IdentityEmbedding::from_raw(&[0.6, 0.8]).unwrap();
        let m = occlusion_saliency(&Constant(no_mask()), &img, &lms, Some(&r), 16, 8, 0.0).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(m.reference_distance.unwrap() < 1e-12);
    }

    #[test]
    fn argmax_lies_in_the_identity_band() {
        let (img, lms) = face();
        let m = occlusion_saliency(&Forehead(no_mask()), &img, &lms, None, 16, 8, 0.0).unwrap();
        let (r, _) = m.argmax();
        let center = r * 8 + 8;
        assert!(BAND.contains(&center), "argmax row center {center}");
        assert!(m.values.iter().all(|&v| v >= 0.0));
        // occluders that miss the band change nothing
        assert_eq!(m.get(8, 0), 0.0);
    }

    #[test]
    fn occluding_masked_pixels_changes_nothing() {
        let (img, lms) = face();
        let pre = Preprocess {
            crop: CropSpec::default(),
            mask: MaskSpec::new(MaskType::InnerMask, 13),
        };
        let cfg = ModelConfig::desk(4);
        let model = EmbeddingModel::new(&cfg, pre, LossConfig::default(), 3).unwrap();
        let (patch, stride) = (8, 8);
        let m = occlusion_saliency(&model, &img, &lms, None, patch, stride, 0.0).unwrap();
        let aligned = align_and_crop(&img, &lms, &pre.crop).unwrap();
        let mask = build_mask(&pre.mask, &aligned.landmarks, (112, 112)).unwrap();
        let mut inside = 0;
        for r in 0..m.rows {
            for c in 0..m.cols {
                let covered = (r * stride..r * stride + patch)
                    .all(|y| (c * stride..c * stride + patch).all(|x| mask.get(y, x)));
                if covered {
                    inside += 1;
                    assert_eq!(m.get(r, c), 0.0);
                }
            }
        }
        assert!(inside > 0);
        assert!(m.values.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn deterministic() {
        let (img, lms) = face();
        let model = EmbeddingModel::new(&ModelConfig::desk(4), Preprocess::default(), LossConfig::default(), 5).unwrap();
        let a = occlusion_saliency(&model, &img, &lms, None, 16, 16, 0.0).unwrap();
        let b = occlusion_saliency(&model, &img, &lms, None, 16, 16, 0.0).unwrap();
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn csv_and_svg_shapes() {
        let m = SaliencyMap {
            rows: 2,
            cols: 3,
            patch: 16,
            stride: 8,
            values: vec![0.0, 0.5, 1.0, 0.25, 0.0, 0.0],
            reference_distance: None,
        };
        assert_eq!(m.to_csv(), "0,0.5,1\n0.25,0,0\n");
        assert_eq!(m.to_svg(32).matches("<rect x=").count(), 6);
        assert_eq!(m.argmax(), (0, 2));
    }
}
