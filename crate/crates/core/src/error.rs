use std::path::PathBuf;

use thiserror::Error;

/// Every domain failure the library can report.
///
/// Display strings lead with the variant name so command-line users can grep
/// for the failure kind.
#[derive(Debug, Error)]
pub enum Error {
    #[error("InvalidLandmarks: {0}")]
    InvalidLandmarks(String),
    #[error("DegenerateLandmarks: eye centers coincide, similarity transform undefined")]
    DegenerateLandmarks,
    #[error("OutOfBounds: {outside} of {total} landmarks fall outside the {width}x{height} image")]
    OutOfBounds {
        outside: usize,
        total: usize,
        width: usize,
        height: usize,
    },
    #[error("EmptySubset: hull mask needs at least 3 landmarks, got {0}")]
    EmptySubset(usize),
    #[error("DimMismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("NonFiniteActivation: non-finite value in {0}")]
    NonFiniteActivation(&'static str),
    #[error("NormalizationDegenerate: feature norm {0:e} is below 1e-12")]
    NormalizationDegenerate(f64),
    #[error("LabelOutOfRange: label {label} with {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("DivergedTraining: non-finite loss at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("EmptyCorpus: no training samples")]
    EmptyCorpus,
    #[error("FakeInTrainSplit: {0} fake-labeled entries in the train split")]
    FakeInTrainSplit(usize),
    #[error("PreprocessMismatch: model expects {model}, verification uses {requested}")]
    PreprocessMismatch { model: String, requested: String },
    #[error("SameVideoReference: candidate {candidate} shares video {video} with the suspect")]
    SameVideoReference { candidate: String, video: String },
    #[error("PoolTooSmall: requested {requested} references from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("DegenerateMean: mean reference embedding has norm {0:e}")]
    DegenerateMean(f64),
    #[error("UnsupportedDims: {0}")]
    UnsupportedDims(String),
    #[error("CodecFailure: {0}")]
    CodecFailure(String),
    #[error("ExternalFrameRequired: external-frame degradation needs a replacement frame")]
    ExternalFrameRequired,
    #[error("SingleClass: need at least one real and one fake score, got {n_real} real and {n_fake} fake")]
    SingleClass { n_real: usize, n_fake: usize },
    #[error("TooFewPairs: {pairs} pairs for {folds} folds")]
    TooFewPairs { pairs: usize, folds: usize },
    #[error("InsufficientFrames: {0}")]
    InsufficientFrames(String),
    #[error("NoEligibleReferences: identity {identity} has no reference candidates outside video {video}")]
    NoEligibleReferences { identity: String, video: String },
    #[error("BadCheckpoint: {0}")]
    BadCheckpoint(String),
    #[error("ManifestParse: line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("IoFailure: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ImageFailure: {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
