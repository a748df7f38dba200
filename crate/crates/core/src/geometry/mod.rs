//! Landmark-driven geometry: eye-based alignment, the four mask families and
//! their rasterization.

mod align;
mod landmarks;
mod mask;

pub use align::{align_and_crop, alignment_transform, bilinear, AlignedFace, CropSpec, Similarity, EYE_LINE};
pub use landmarks::{landmark_distance, one_based, LandmarkSet, Point, NUM_LANDMARKS};
pub use mask::{
    apply_mask, build_mask, convex_hull, rasterize_disks, BinaryMask, MaskSpec, MaskType, DEFAULT_RADIUS,
};

#[cfg(test)]
pub(crate) use landmarks::tests as landmarks_tests;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::FaceImage;

/// Crop plus mask recipe shared by training, verification and evaluation.
/// A model only gives meaningful distances for inputs prepared the same way
/// it was trained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub crop: CropSpec,
    pub mask: MaskSpec,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            crop: CropSpec::default(),
            mask: MaskSpec::default(),
        }
    }
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        self.mask.validate(self.crop.output_size)
    }

    /// Short stable description used to compare preprocessing between a
    /// model and a verification request.
    pub fn fingerprint(&self) -> String {
        format!(
            "crop(ratio={},size={})+mask({},k={})",
            self.crop.eye_dist_ratio, self.crop.output_size, self.mask.mask_type, self.mask.radius_k
        )
    }

    /// Align, crop, then mask.
    pub fn run(&self, image: &FaceImage, landmarks: &LandmarkSet) -> Result<(FaceImage, LandmarkSet)> {
        let aligned = align_and_crop(image, landmarks, &self.crop)?;
        let masked = self.mask_crop(&aligned.image, &aligned.landmarks)?;
        Ok((masked, aligned.landmarks))
    }

    /// Masks an already-cropped face.
    pub fn mask_crop(&self, crop: &FaceImage, crop_landmarks: &LandmarkSet) -> Result<FaceImage> {
        if self.mask.mask_type == MaskType::NoMask {
            return Ok(crop.clone());
        }
        let mask = build_mask(&self.mask, crop_landmarks, crop.dims())?;
        apply_mask(crop, &mask)
    }
}
