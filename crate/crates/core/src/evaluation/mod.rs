//! Frame-level ROC and AUC, thresholded accuracy, pair verification,
//! occlusion saliency and the manifest-driven scoring pipeline.

mod pairs;
mod pipeline;
mod roc;
mod saliency;

pub use pairs::{distance_pair_accuracy, pair_verification_accuracy, EmbeddingPair, DEFAULT_FOLDS};
pub use pipeline::{audit_reference_videos, derive_seed, EmbeddedFace, EvalConfig, EvalOutcome, Evaluator};
pub use roc::{
    accuracy_at_threshold, calibrate_threshold, roc_auc, roc_csv, roc_svg, AccuracyReport, RocReport, ScoredFrame,
    SCORE_ORIENTATION,
};
pub use saliency::{occlusion_saliency, SaliencyMap, DEFAULT_FILL, DEFAULT_PATCH, DEFAULT_STRIDE};
