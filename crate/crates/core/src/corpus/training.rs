use rayon::prelude::*;

use super::manifest::{Label, Manifest, Split};
use crate::embedding::TrainSample;
use crate::error::{Error, Result};

/// Loads the train split as training samples. Identity classes follow the
/// sorted identity list of the whole manifest. Fails on any fake train
/// entry before reading a single image.
pub fn training_samples(manifest: &Manifest) -> Result<Vec<TrainSample>> {
    manifest.check_fake_free_training()?;
    let classes = manifest.identity_classes();
    let entries: Vec<_> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    entries
        .par_iter()
        .map(|e| {
            let path = manifest.resolve(&e.image_path);
            let image = image::open(&path)
                .map_err(|err| Error::Image {
                    path: path.clone(),
                    message: err.to_string(),
                })?
                .to_rgb8();
            Ok(TrainSample {
                image,
                landmarks: manifest.load_landmarks(e)?,
                class: classes[&e.identity],
                label: Label::Real,
            })
        })
        .collect()
}
