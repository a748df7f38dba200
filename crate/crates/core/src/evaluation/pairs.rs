use crate::embedding::IdentityEmbedding;
use crate::error::{Error, Result};
use crate::verification::cosine_distance;

/// Folds used by the standard pair-verification protocol.
pub const DEFAULT_FOLDS: usize = 10;

/// A labeled pair of embeddings: `same` when both show one identity.
#[derive(Clone, Debug)]
pub struct EmbeddingPair {
    pub a: IdentityEmbedding,
    pub b: IdentityEmbedding,
    pub same: bool,
}

/// k-fold pair-verification accuracy with the decision
/// `same <=> distance <= tau`. Folds are contiguous blocks in input order;
/// each fold is scored at the threshold that maximizes accuracy on the
/// remaining folds. Returns the mean held-out accuracy.
pub fn pair_verification_accuracy(pairs: &[EmbeddingPair], folds: usize) -> Result<f64> {
    let scored: Vec<(f64, bool)> = pairs.iter().map(|p| (cosine_distance(&p.a, &p.b), p.same)).collect();
    distance_pair_accuracy(&scored, folds)
}

/// Same protocol on precomputed `(distance, same)` pairs.
pub fn distance_pair_accuracy(pairs: &[(f64, bool)], folds: usize) -> Result<f64> {
    if folds < 2 || pairs.len() < folds {
        return Err(Error::TooFewPairs {
            pairs: pairs.len(),
            folds,
        });
    }
    let n = pairs.len();
    let bounds: Vec<usize> = (0..=folds).map(|k| k * n / folds).collect();
    let mut total = 0.0;
    for k in 0..folds {
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let train: Vec<(f64, bool)> = pairs[..lo].iter().chain(&pairs[hi..]).copied().collect();
        let tau = best_threshold(&train);
        total += accuracy(&pairs[lo..hi], tau);
    }
    Ok(total / folds as f64)
}

fn accuracy(pairs: &[(f64, bool)], tau: f64) -> f64 {
    let correct = pairs.iter().filter(|&&(d, same)| (d <= tau) == same).count();
    correct as f64 / pairs.len() as f64
}

/// Accuracy-maximizing threshold among "everything different" and each
/// observed distance; ties go to the smallest.
fn best_threshold(pairs: &[(f64, bool)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_diff = sorted.iter().filter(|p| !p.1).count();
    // below every distance: all pairs are called different
    let mut correct = n_diff;
    let mut best = (correct, f64::NEG_INFINITY);
    let mut i = 0;
    while i < sorted.len() {
        let d = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == d {
            if sorted[i].1 {
                correct += 1;
            } else {
                correct -= 1;
            }
            i += 1;
        }
        if correct > best.0 {
            best = (correct, d);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_pairs() {
        let pairs: Vec<(f64, bool)> = (0..20).map(|i| if i % 2 == 0 { (0.0, true) } else { (1.0, false) }).collect();
        assert_eq!(distance_pair_accuracy(&pairs, 10).unwrap(), 1.0);
    }

    /// Four pairs, two folds; fold 0 holds pairs 0-1 and fold 1 pairs 2-3.
    ///
    /// Same-pairs far: fold 0 trains on (0.2 diff, 0.9 same), where
    /// thresholds -inf/0.2/0.9 score 1/2, 0/2, 1/2, so tau = -inf and the
    /// held-out (0.1 diff, 0.8 same) scores 1/2. Fold 1 mirrors it: 1/2.
    ///
    /// Same-pairs near: fold 0 trains on (0.2 same, 0.9 diff), tau = 0.2, and
    /// scores 2/2. Fold 1 trains on (0.1 same, 0.8 diff), tau = 0.1, so the
    /// held-out 0.2 same-pair is missed: 1/2.
    #[test]
    fn four_pair_hand_case() {
        let far_same = [(0.1, false), (0.8, true), (0.2, false), (0.9, true)];
        assert_eq!(distance_pair_accuracy(&far_same, 2).unwrap(), 0.5);
        let near_same: Vec<(f64, bool)> = far_same.iter().map(|&(d, s)| (d, !s)).collect();
        assert_eq!(best_threshold(&near_same[2..]), 0.2);
        assert_eq!(best_threshold(&near_same[..2]), 0.1);
        assert_eq!(distance_pair_accuracy(&near_same, 2).unwrap(), 0.75);
    }

    #[test]
    fn too_few_pairs() {
        let pairs = [(0.1, true); 5];
        assert!(matches!(
            distance_pair_accuracy(&pairs, 10),
            Err(Error::TooFewPairs { pairs: 5, folds: 10 })
        ));
    }

    #[test]
    fn embedding_entry_point() {
        let e = |v: &[f64]| IdentityEmbedding::from_raw(v).unwrap();
        let pairs: Vec<EmbeddingPair> = (0..4)
            .map(|i| EmbeddingPair {
                a: e(&[1.0, 0.0]),
                b: if i % 2 == 0 { e(&[1.0, 0.1]) } else { e(&[0.0, 1.0]) },
                same: i % 2 == 0,
            })
            .collect();
        assert_eq!(pair_verification_accuracy(&pairs, 2).unwrap(), 1.0);
    }
}
