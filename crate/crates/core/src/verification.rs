//! Reference-based identity verification: cosine distance, reference
//! selection, multi-reference aggregation and the threshold decision.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, IdentityEmbedding, MIN_NORM};
use crate::error::{Error, Result};
use crate::geometry::{alignment_transform, landmark_distance, CropSpec, LandmarkSet, Preprocess};
use crate::image::FaceImage;

/// Largest number of references combined into one mean embedding.
pub const MAX_REFERENCES: usize = 50;

/// `1 - <a, b>`, in `[0, 2]` for unit vectors.
pub fn cosine_distance(a: &IdentityEmbedding, b: &IdentityEmbedding) -> f64 {
    let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Real,
    Fake,
}

impl Decision {
    /// Fake exactly when the distance is strictly greater than `tau`.
    pub fn from_distance(distance: f64, tau: f64) -> Self {
        if distance > tau {
            Decision::Fake
        } else {
            Decision::Real
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum Strategy {
    Random(u64),
    Nearest,
    Farthest,
}

impl Strategy {
    /// Parses `random`, `nearest` or `farthest`; `random` takes `seed`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "random" => Ok(Strategy::Random(seed)),
            "nearest" => Ok(Strategy::Nearest),
            "farthest" => Ok(Strategy::Farthest),
            _ => Err(Error::InvalidConfig(format!("unknown strategy `{name}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random(_) => "random",
            Strategy::Nearest => "nearest",
            Strategy::Farthest => "farthest",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::parse(s, 0)
    }
}

/// A trusted real image of the claimed identity.
#[derive(Clone, Debug)]
pub struct ReferenceCandidate {
    pub id: String,
    pub video_id: String,
    pub image: FaceImage,
    pub landmarks: LandmarkSet,
}

#[derive(Clone, Debug)]
pub struct ReferencePool {
    candidates: Vec<ReferenceCandidate>,
    pub strategy: Strategy,
    pub count: usize,
}

fn check_count(count: usize) -> Result<()> {
    if !(1..=MAX_REFERENCES).contains(&count) {
        return Err(Error::InvalidConfig(format!(
            "reference count must be in 1..={MAX_REFERENCES}, got {count}"
        )));
    }
    Ok(())
}

impl ReferencePool {
    /// Builds a pool for a suspect from `suspect_video`, rejecting any
    /// candidate taken from that same video.
    pub fn new(
        candidates: Vec<ReferenceCandidate>,
        strategy: Strategy,
        count: usize,
        suspect_video: &str,
    ) -> Result<Self> {
        if let Some(c) = candidates.iter().find(|c| c.video_id == suspect_video) {
            return Err(Error::SameVideoReference {
                candidate: c.id.clone(),
                video: c.video_id.clone(),
            });
        }
        Self::new_unchecked(candidates, strategy, count)
    }

    /// Skips the same-video check. Only for tests that use a suspect as its
    /// own reference.
    pub fn new_unchecked(candidates: Vec<ReferenceCandidate>, strategy: Strategy, count: usize) -> Result<Self> {
        check_count(count)?;
        Ok(Self {
            candidates,
            strategy,
            count,
        })
    }

    pub fn candidates(&self) -> &[ReferenceCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Picks `count` of the candidates given their landmark distances to the
/// suspect. Returns indices into `ids`.
pub fn select_indices(distances: &[f64], ids: &[&str], strategy: Strategy, count: usize) -> Result<Vec<usize>> {
    debug_assert_eq!(distances.len(), ids.len());
    let n = ids.len();
    if count == 0 || count > n {
        return Err(Error::PoolTooSmall {
            requested: count,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    match strategy {
        Strategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            return Ok(index::sample(&mut rng, n, count).into_vec());
        }
        Strategy::Nearest => order.sort_by(|&a, &b| {
            distances[a]
                .total_cmp(&distances[b])
                .then_with(|| ids[a].cmp(ids[b]))
        }),
        Strategy::Farthest => order.sort_by(|&a, &b| {
            distances[b]
                .total_cmp(&distances[a])
                .then_with(|| ids[a].cmp(ids[b]))
        }),
    }
    order.truncate(count);
    Ok(order)
}

/// Chooses references by comparing landmarks in the coordinates they are
/// given in.
pub fn select_reference<'a>(suspect: &LandmarkSet, pool: &'a ReferencePool) -> Result<Vec<&'a ReferenceCandidate>> {
    let distances: Vec<f64> = pool
        .candidates
        .iter()
        .map(|c| landmark_distance(suspect, &c.landmarks))
        .collect();
    pick(pool, &distances)
}

/// Landmarks mapped into the aligned crop frame, which removes in-plane
/// rotation, scale and translation before comparing faces.
pub fn canonical_landmarks(landmarks: &LandmarkSet, crop: &CropSpec) -> Result<LandmarkSet> {
    let t = alignment_transform(landmarks, crop)?;
    Ok(landmarks.map(|p| t.apply(p)))
}

/// Chooses references by landmark distance measured in the aligned crop
/// frame, so only residual pose (out-of-plane rotation, expression) counts.
pub fn select_reference_aligned<'a>(
    suspect: &LandmarkSet,
    pool: &'a ReferencePool,
    crop: &CropSpec,
) -> Result<Vec<&'a ReferenceCandidate>> {
    let s = canonical_landmarks(suspect, crop)?;
    let distances = pool
        .candidates
        .iter()
        .map(|c| Ok(landmark_distance(&s, &canonical_landmarks(&c.landmarks, crop)?)))
        .collect::<Result<Vec<_>>>()?;
    pick(pool, &distances)
}

fn pick<'a>(pool: &'a ReferencePool, distances: &[f64]) -> Result<Vec<&'a ReferenceCandidate>> {
    let ids: Vec<&str> = pool.candidates.iter().map(|c| c.id.as_str()).collect();
    let chosen = select_indices(distances, &ids, pool.strategy, pool.count)?;
    Ok(chosen.into_iter().map(|i| &pool.candidates[i]).collect())
}

/// Mean of unit embeddings, renormalized.
pub fn aggregate_references(embeddings: &[IdentityEmbedding]) -> Result<IdentityEmbedding> {
    let first = embeddings.first().ok_or(Error::PoolTooSmall {
        requested: 1,
        available: 0,
    })?;
    let d = first.dim();
    let mut mean = vec![0.0f64; d];
    for e in embeddings {
        if e.dim() != d {
            return Err(Error::InvalidConfig(format!(
                "embedding dimensions differ: {d} vs {}",
                e.dim()
            )));
        }
        for (m, v) in mean.iter_mut().zip(e.as_slice()) {
            *m += v;
        }
    }
    let k = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(Error::DegenerateMean(norm));
    }
    IdentityEmbedding::from_raw(&mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub threshold: f64,
    pub preprocess: Preprocess,
}

impl VerificationConfig {
    pub fn new(threshold: f64, preprocess: Preprocess) -> Result<Self> {
        if !(0.0..=2.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!("threshold must be in [0, 2], got {threshold}")));
        }
        preprocess.validate()?;
        Ok(Self { threshold, preprocess })
    }

    /// Suspect and references must be prepared the way the model was trained.
    pub fn check_model(&self, model: &(impl Embedder + ?Sized)) -> Result<()> {
        let (m, r) = (model.preprocess().fingerprint(), self.preprocess.fingerprint());
        if m != r {
            return Err(Error::PreprocessMismatch { model: m, requested: r });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub distance: f64,
    pub decision: Decision,
    pub chosen_reference_ids: Vec<String>,
}

/// Distance and decision for a suspect against an already aggregated
/// reference embedding.
pub fn decide(suspect: &IdentityEmbedding, reference: &IdentityEmbedding, tau: f64) -> (f64, Decision) {
    let d = cosine_distance(suspect, reference);
    (d, Decision::from_distance(d, tau))
}

/// Verifies one suspect face against references of its claimed identity.
pub fn verify(
    model: &(impl Embedder + ?Sized),
    suspect: (&FaceImage, &LandmarkSet),
    pool: &ReferencePool,
    cfg: &VerificationConfig,
) -> Result<VerificationResult> {
    cfg.check_model(model)?;
    let chosen = select_reference_aligned(suspect.1, pool, &cfg.preprocess.crop)?;
    let suspect_emb = model.embed_face(suspect.0, suspect.1)?;
    let refs = chosen
        .iter()
        .map(|c| model.embed_face(&c.image, &c.landmarks))
        .collect::<Result<Vec<_>>>()?;
    let reference = aggregate_references(&refs)?;
    let (distance, decision) = decide(&suspect_emb, &reference, cfg.threshold);
    Ok(VerificationResult {
        distance,
        decision,
        chosen_reference_ids: chosen.iter().map(|c| c.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::landmarks_tests::frontal;
    use crate::geometry::Point;

    fn unit(v: &[f64]) -> IdentityEmbedding {
        IdentityEmbedding::from_raw(v).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = unit(&[1.0, 0.0, 0.0]);
        let b = unit(&[0.0, 1.0, 0.0]);
        let c = unit(&[-1.0, 0.0, 0.0]);
        assert_eq!(cosine_distance(&a, &a), 0.0);
        assert_eq!(cosine_distance(&a, &b), 1.0);
        assert_eq!(cosine_distance(&a, &c), 2.0);
        assert_eq!(cosine_distance(&b, &a), cosine_distance(&a, &b));
    }

    #[test]
    fn threshold_decisions() {
        assert_eq!(Decision::from_distance(0.30, 0.50), Decision::Real);
        assert_eq!(Decision::from_distance(0.70, 0.50), Decision::Fake);
        assert_eq!(Decision::from_distance(0.50, 0.50), Decision::Real);
    }

    fn candidate(id: &str, video: &str, shift: f64) -> ReferenceCandidate {
        ReferenceCandidate {
            id: id.into(),
            video_id: video.into(),
            image: FaceImage::new(4, 4),
            landmarks: frontal().map(|p| Point::new(p.x + shift, p.y)),
        }
    }

    #[test]
    fn nearest_and_farthest_on_three() {
        // every point shifted by s gives distance s * sqrt(68)
        let scale = 68f64.sqrt();
        let cands = vec![candidate("a", "v1", 5.0 / scale), candidate("b", "v2", 2.0 / scale), candidate("c", "v3", 9.0 / scale)];
        let near = ReferencePool::new(cands.clone(), Strategy::Nearest, 1, "v0").unwrap();
        assert_eq!(select_reference(&frontal(), &near).unwrap()[0].id, "b");
        let far = ReferencePool::new(cands, Strategy::Farthest, 1, "v0").unwrap();
        assert_eq!(select_reference(&frontal(), &far).unwrap()[0].id, "c");
    }

    #[test]
    fn ties_break_by_id() {
        let cands = vec![candidate("z", "v1", 0.0), candidate("m", "v2", 0.0), candidate("a", "v3", 1.0)];
        let pool = ReferencePool::new(cands.clone(), Strategy::Nearest, 2, "v0").unwrap();
        let ids: Vec<_> = select_reference(&frontal(), &pool).unwrap().iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids, ["m", "z"]);
        let pool = ReferencePool::new(cands, Strategy::Farthest, 3, "v0").unwrap();
        let ids: Vec<_> = select_reference(&frontal(), &pool).unwrap().iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let cands: Vec<_> = (0..20).map(|i| candidate(&format!("c{i:02}"), &format!("v{i}"), i as f64)).collect();
        let pool = ReferencePool::new(cands, Strategy::Random(42), 5, "x").unwrap();
        let a: Vec<_> = select_reference(&frontal(), &pool).unwrap().iter().map(|c| c.id.clone()).collect();
        let b: Vec<_> = select_reference(&frontal(), &pool).unwrap().iter().map(|c| c.id.clone()).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn pool_errors() {
        let cands = vec![candidate("a", "v1", 0.0)];
        assert!(matches!(
            ReferencePool::new(cands.clone(), Strategy::Nearest, 1, "v1"),
            Err(Error::SameVideoReference { .. })
        ));
        let pool = ReferencePool::new(cands.clone(), Strategy::Nearest, 2, "v0").unwrap();
        assert!(matches!(
            select_reference(&frontal(), &pool),
            Err(Error::PoolTooSmall { requested: 2, available: 1 })
        ));
        assert!(ReferencePool::new(cands, Strategy::Nearest, 51, "v0").is_err());
    }

    #[test]
    fn aggregation_examples() {
        let e1 = unit(&[1.0, 0.0]);
        let e2 = unit(&[0.0, 1.0]);
        assert_eq!(aggregate_references(&[e1.clone()]).unwrap(), e1);
        assert_eq!(aggregate_references(&[e1.clone(), e1.clone()]).unwrap(), e1);
        let mean = aggregate_references(&[e1.clone(), e2]).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((mean.as_slice()[0] - h).abs() < 1e-15 && (mean.as_slice()[1] - h).abs() < 1e-15);
        let anti = unit(&[-1.0, 0.0]);
        assert!(matches!(aggregate_references(&[e1, anti]), Err(Error::DegenerateMean(_))));
    }
}
