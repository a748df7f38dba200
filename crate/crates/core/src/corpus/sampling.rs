use std::collections::BTreeMap;

use log::warn;
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Label, Manifest, ManifestEntry, Role, Split};
use crate::error::{Error, Result};
use crate::verification::{ReferenceCandidate, ReferencePool, Strategy};

/// Reference pool size used by the evaluation protocol.
pub const DEFAULT_POOL_SIZE: usize = 100;

/// Frames requested per class in the full-scale protocol.
pub const FULL_SCALE_FRAMES_PER_CLASS: usize = 20_000;

/// Draws `n_per_class` real and `n_per_class` fake frames from `split`,
/// spreading each class evenly over identities: identities are taken in
/// sorted order and the first `n % k` of them get one extra frame. Frames
/// within an identity are a seeded uniform sample. Reals come first in the
/// result, then fakes, each grouped by identity.
pub fn sample_frames(manifest: &Manifest, split: Split, n_per_class: usize, seed: u64) -> Result<Vec<&ManifestEntry>> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    for (class_idx, label) in [Label::Real, Label::Fake].into_iter().enumerate() {
        let mut by_identity: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
        for e in manifest.split(split).filter(|e| e.label == label) {
            by_identity.entry(e.identity.as_str()).or_default().push(e);
        }
        let available: usize = by_identity.values().map(Vec::len).sum();
        if available < n_per_class || (n_per_class > 0 && by_identity.is_empty()) {
            return Err(Error::InsufficientFrames(format!(
                "{split} split has {available} {label:?} frames, {n_per_class} requested"
            )));
        }
        if n_per_class == 0 {
            continue;
        }
        let k = by_identity.len();
        for (i, (identity, frames)) in by_identity.into_iter().enumerate() {
            let quota = n_per_class / k + usize::from(i < n_per_class % k);
            if frames.len() < quota {
                return Err(Error::InsufficientFrames(format!(
                    "identity {identity} has {} {label:?} frames in {split}, {quota} needed for an even draw",
                    frames.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((class_idx as u64) << 32) | i as u64);
            let mut picked = sample(&mut rng, frames.len(), quota).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|j| frames[j]));
        }
    }
    Ok(out)
}

/// Real reference candidates of `identity` outside `suspect_video_id`,
/// uniformly sampled without replacement down to `pool_size`. The result
/// keeps manifest order. A short pool is returned as is.
pub fn reference_pool_entries<'a>(
    manifest: &'a Manifest,
    identity: &str,
    suspect_video_id: &str,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<&'a ManifestEntry>> {
    let eligible: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| {
            e.identity == identity
                && e.role == Role::ReferenceCandidate
                && e.label == Label::Real
                && e.video_id != suspect_video_id
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleReferences {
            identity: identity.to_string(),
            video: suspect_video_id.to_string(),
        });
    }
    if eligible.len() <= pool_size {
        return Ok(eligible);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, eligible.len(), pool_size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| eligible[i]).collect())
}

/// Loads a reference pool for one suspect, honoring the same-video exclusion.
#[allow(clippy::too_many_arguments)]
pub fn build_reference_pool(
    manifest: &Manifest,
    identity: &str,
    suspect_video_id: &str,
    pool_size: usize,
    seed: u64,
    strategy: Strategy,
    count: usize,
) -> Result<ReferencePool> {
    let entries = reference_pool_entries(manifest, identity, suspect_video_id, pool_size, seed)?;
    if entries.len() < pool_size {
        warn!(
            "identity {identity}: only {} eligible references, pool size {pool_size} requested",
            entries.len()
        );
    }
    let candidates = entries
        .into_iter()
        .map(|e| {
            Ok(ReferenceCandidate {
                id: e.frame_id.clone(),
                video_id: e.video_id.clone(),
                image: manifest.load_image(e)?,
                landmarks: manifest.load_landmarks(e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ReferencePool::new(candidates, strategy, count, suspect_video_id)
}
