use std::collections::HashMap;
use std::path::PathBuf;

use log::warn;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::roc::{roc_auc, RocReport, ScoredFrame};
use crate::corpus::{reference_pool_entries, sample_frames, Manifest, ManifestEntry, Role, Split, DEFAULT_POOL_SIZE};
use crate::degradation::{degrade, external_frame_path, substitute_external, DegradationSpec};
use crate::embedding::{Embedder, IdentityEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{align_and_crop, landmark_distance, LandmarkSet};
use crate::image::FaceImage;
use crate::verification::{aggregate_references, cosine_distance, select_indices, Strategy, MAX_REFERENCES};

/// Seed for one randomized step on one frame, stable across runs, thread
/// counts and platforms.
pub fn derive_seed(seed: u64, purpose: &str, frame_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(frame_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub split: Split,
    pub strategy: Strategy,
    pub ref_count: usize,
    pub pool_size: usize,
    /// Drives pool sampling, frame sampling and per-frame random choices.
    pub seed: u64,
    /// Applied to suspects only, after cropping and before masking.
    pub degradation: DegradationSpec,
    /// Even per-identity draw of this many frames per class; all frames of
    /// the split when unset.
    pub frames_per_class: Option<usize>,
    /// Root of externally degraded frames.
    pub external_root: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            strategy: Strategy::Random(0),
            ref_count: 1,
            pool_size: DEFAULT_POOL_SIZE,
            seed: 0,
            degradation: DegradationSpec::None,
            frames_per_class: None,
            external_root: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_REFERENCES).contains(&self.ref_count) {
            return Err(Error::InvalidConfig(format!(
                "reference count must be in 1..={MAX_REFERENCES}, got {}",
                self.ref_count
            )));
        }
        if self.pool_size < self.ref_count {
            return Err(Error::PoolTooSmall {
                requested: self.ref_count,
                available: self.pool_size,
            });
        }
        self.degradation.validate()
    }
}

/// An embedded, aligned face. The landmarks are in crop coordinates, which
/// is the frame reference selection compares them in.
#[derive(Clone, Debug)]
pub struct EmbeddedFace {
    pub landmarks: LandmarkSet,
    pub embedding: IdentityEmbedding,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub frames: Vec<ScoredFrame>,
    /// Frame ids of the references behind each score, parallel to `frames`.
    pub references: Vec<Vec<String>>,
    pub roc: RocReport,
}

/// Scores suspects of a manifest against reference pools of their claimed
/// identity. Reference embeddings are computed once and shared by every
/// run on the same evaluator.
pub struct Evaluator<'a, E: Embedder + ?Sized> {
    manifest: &'a Manifest,
    model: &'a E,
    references: HashMap<&'a str, EmbeddedFace>,
}

impl<'a, E: Embedder + ?Sized> Evaluator<'a, E> {
    /// Embeds every reference candidate of the manifest.
    pub fn new(manifest: &'a Manifest, model: &'a E) -> Result<Self> {
        let candidates: Vec<&ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.role == Role::ReferenceCandidate)
            .collect();
        let embedded = candidates
            .par_iter()
            .map(|e| embed_entry(manifest, model, e, &DegradationSpec::None, None))
            .collect::<Result<Vec<_>>>()?;
        let references = candidates
            .into_iter()
            .map(|e| e.frame_id.as_str())
            .zip(embedded)
            .collect();
        Ok(Self {
            manifest,
            model,
            references,
        })
    }

    /// Frames of the configured split, or an even sample of them.
    pub fn suspects(&self, cfg: &EvalConfig) -> Result<Vec<&'a ManifestEntry>> {
        match cfg.frames_per_class {
            Some(n) => sample_frames(self.manifest, cfg.split, n, cfg.seed),
            None => Ok(self.manifest.split(cfg.split).collect()),
        }
    }

    /// Embeds suspects under the configured degradation. Noise seeds are
    /// derived per frame from the degradation's own seed.
    pub fn embed_suspects(&self, suspects: &[&ManifestEntry], cfg: &EvalConfig) -> Result<Vec<EmbeddedFace>> {
        suspects
            .par_iter()
            .map(|e| {
                let spec = match &cfg.degradation {
                    DegradationSpec::GaussianNoise { seed, .. } => {
                        cfg.degradation.with_seed(derive_seed(*seed, "noise", &e.frame_id))
                    }
                    other => other.clone(),
                };
                embed_entry(self.manifest, self.model, e, &spec, cfg.external_root.as_ref())
            })
            .collect()
    }

    /// Scores already embedded suspects. Pools, strategies and reference
    /// counts can vary between calls without re-embedding anything.
    pub fn score(&self, suspects: &[&ManifestEntry], embedded: &[EmbeddedFace], cfg: &EvalConfig) -> Result<EvalOutcome> {
        cfg.validate()?;
        let scored = suspects
            .par_iter()
            .zip(embedded)
            .map(|(e, face)| self.score_one(e, face, cfg))
            .collect::<Result<Vec<_>>>()?;
        let short = scored.iter().filter(|s| s.2 < cfg.pool_size).count();
        if short > 0 {
            warn!(
                "{short} of {} suspects drew fewer than {} eligible references",
                scored.len(),
                cfg.pool_size
            );
        }
        let (frames, references): (Vec<_>, Vec<_>) = scored.into_iter().map(|(f, r, _)| (f, r)).unzip();
        let roc = roc_auc(&frames)?;
        Ok(EvalOutcome {
            frames,
            references,
            roc,
        })
    }

    /// Selects, embeds and scores in one go.
    pub fn run(&self, cfg: &EvalConfig) -> Result<EvalOutcome> {
        cfg.validate()?;
        let suspects = self.suspects(cfg)?;
        let embedded = self.embed_suspects(&suspects, cfg)?;
        self.score(&suspects, &embedded, cfg)
    }

    fn score_one(&self, e: &ManifestEntry, face: &EmbeddedFace, cfg: &EvalConfig) -> Result<(ScoredFrame, Vec<String>, usize)> {
        let pool = reference_pool_entries(
            self.manifest,
            &e.identity,
            &e.video_id,
            cfg.pool_size,
            derive_seed(cfg.seed, "pool", &e.frame_id),
        )?;
        let faces: Vec<&EmbeddedFace> = pool
            .iter()
            .map(|c| {
                self.references
                    .get(c.frame_id.as_str())
                    .ok_or_else(|| Error::InvalidConfig(format!("reference {} was not embedded", c.frame_id)))
            })
            .collect::<Result<_>>()?;
        let distances: Vec<f64> = faces
            .iter()
            .map(|f| landmark_distance(&face.landmarks, &f.landmarks))
            .collect();
        let ids: Vec<&str> = pool.iter().map(|c| c.frame_id.as_str()).collect();
        let strategy = match cfg.strategy {
            Strategy::Random(s) => Strategy::Random(derive_seed(s, "refs", &e.frame_id)),
            other => other,
        };
        let chosen = select_indices(&distances, &ids, strategy, cfg.ref_count)?;
        let refs: Vec<IdentityEmbedding> = chosen.iter().map(|&i| faces[i].embedding.clone()).collect();
        let reference = aggregate_references(&refs)?;
        let frame = ScoredFrame {
            frame_id: e.frame_id.clone(),
            identity: e.identity.clone(),
            video_id: e.video_id.clone(),
            label: e.label,
            score: cosine_distance(&face.embedding, &reference),
        };
        let chosen_ids = chosen.into_iter().map(|i| ids[i].to_string()).collect();
        Ok((frame, chosen_ids, pool.len()))
    }
}

/// Loads, aligns, degrades, masks and embeds one manifest frame.
fn embed_entry(
    manifest: &Manifest,
    model: &(impl Embedder + ?Sized),
    e: &ManifestEntry,
    degradation: &DegradationSpec,
    external_root: Option<&PathBuf>,
) -> Result<EmbeddedFace> {
    let pre = model.preprocess();
    let landmarks = manifest.load_landmarks(e)?;
    let mut image = manifest.load_image(e)?;
    if let DegradationSpec::ExternalFrames(tag) = degradation {
        let root = external_root.ok_or(Error::ExternalFrameRequired)?;
        let frame = FaceImage::load(&external_frame_path(root, tag, &e.image_path))?;
        image = substitute_external(&image, frame)?;
    }
    let aligned = align_and_crop(&image, &landmarks, &pre.crop)?;
    let crop = match degradation {
        DegradationSpec::None | DegradationSpec::ExternalFrames(_) => aligned.image,
        spec => degrade(&aligned.image, spec)?,
    };
    let input = pre.mask_crop(&crop, &aligned.landmarks)?;
    Ok(EmbeddedFace {
        embedding: model.embed_input(&input)?,
        landmarks: aligned.landmarks,
    })
}

/// Post-hoc audit: no score may rest on a reference from the suspect's own
/// video.
pub fn audit_reference_videos(manifest: &Manifest, outcome: &EvalOutcome) -> Result<()> {
    let video_of: HashMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.frame_id.as_str(), e.video_id.as_str()))
        .collect();
    for (frame, refs) in outcome.frames.iter().zip(&outcome.references) {
        for r in refs {
            let video = video_of
                .get(r.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("unknown reference frame {r}")))?;
            if *video == frame.video_id {
                return Err(Error::SameVideoReference {
                    candidate: r.clone(),
                    video: frame.video_id.clone(),
                });
            }
        }
    }
    Ok(())
}
