//! Frame manifests, evaluation sampling, reference pools and the synthetic
//! face corpus.

mod manifest;
mod sampling;
pub mod synth;
mod training;

pub use manifest::{Label, Manifest, ManifestEntry, Role, Split, MANIFEST_VERSION};
pub use synth::{generate_synthetic_corpus, PoseJitter, SynthFaceConfig};
pub use training::training_samples;
pub use sampling::{build_reference_pool, reference_pool_entries, sample_frames, DEFAULT_POOL_SIZE, FULL_SCALE_FRAMES_PER_CLASS};
