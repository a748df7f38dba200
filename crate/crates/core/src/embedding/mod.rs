//! Identity embedding model: conv backbone, margin-softmax loss and the
//! fake-free training loop.

mod checkpoint;
mod loss;
mod network;
mod real;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{arcface, arcface_backward, arcface_loss, Batch, LossConfig, LossGradients, LossOutput, COS_EPS, MIN_NORM};
pub use network::{ConvLayer, ForwardCache, ModelConfig, Network};
pub use real::Real;
pub use train::{train, EpochLog, TrainOutcome, TrainSample, TrainSchedule};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Preprocess};
use crate::image::FaceImage;

/// Unit-norm identity vector.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityEmbedding(Vec<f64>);

impl IdentityEmbedding {
    /// Normalizes `v`; fails when its norm is below [`MIN_NORM`].
    pub fn from_raw<T: Real>(v: &[T]) -> Result<Self> {
        let (unit, _) = loss::normalize(v)?;
        Ok(Self(unit))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Anything that maps a preprocessed face crop to an identity embedding.
pub trait Embedder: Sync {
    fn preprocess(&self) -> &Preprocess;

    /// Embeds a crop that has already been aligned and masked.
    fn embed_input(&self, crop: &FaceImage) -> Result<IdentityEmbedding>;

    /// Align, crop, mask, embed.
    fn embed_face(&self, image: &FaceImage, landmarks: &LandmarkSet) -> Result<IdentityEmbedding> {
        let (crop, _) = self.preprocess().run(image, landmarks)?;
        self.embed_input(&crop)
    }
}

/// A trained (or freshly initialized) model together with the preprocessing
/// and loss settings it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub preprocess: Preprocess,
    pub loss: LossConfig,
    pub net: Network<f32>,
}

impl EmbeddingModel {
    pub fn new(config: &ModelConfig, preprocess: Preprocess, loss: LossConfig, seed: u64) -> Result<Self> {
        preprocess.validate()?;
        loss.validate()?;
        if config.input_size != preprocess.crop.output_size {
            return Err(Error::InvalidConfig(format!(
                "model input {} does not match crop size {}",
                config.input_size, preprocess.crop.output_size
            )));
        }
        Ok(Self {
            preprocess,
            loss,
            net: Network::init(config, seed)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }
}

/// Embedding of a preprocessed crop.
pub fn forward(model: &EmbeddingModel, crop: &FaceImage) -> Result<IdentityEmbedding> {
    model.embed_input(crop)
}

impl Embedder for EmbeddingModel {
    fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    fn embed_input(&self, crop: &FaceImage) -> Result<IdentityEmbedding> {
        IdentityEmbedding::from_raw(&self.net.feature(crop)?)
    }
}
