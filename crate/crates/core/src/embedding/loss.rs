//! Additive angular margin softmax over cosine logits.
//!
//! For a sample with raw feature `f`, label `y` and raw class weights `W_j`:
//! `cos_j = <f/|f|, W_j/|W_j|>`, the target logit is `s * cos(acos(cos_y) + m)`
//! and every other logit is `s * cos_j`. The loss is the batch mean of the
//! softmax cross-entropy over those logits.

use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

/// Clamp applied to the target cosine before `acos`.
pub const COS_EPS: f64 = 1e-7;

/// Features whose norm falls below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub scale: f64,
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            scale: 64.0,
            margin: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.margin >= 0.0 && self.margin < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidConfig(format!(
                "margin must be in [0, pi/2), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// A batch of row-major vectors, `rows x dim`.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a, T> {
    pub data: &'a [T],
    pub dim: usize,
}

impl<'a, T> Batch<'a, T> {
    pub fn new(data: &'a [T], dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "batch length is not a multiple of dim");
        Self { data, dim }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &'a [T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// Per-sample cross-entropy; `loss` is their mean.
    pub per_sample: Vec<f64>,
    /// `batch x n_classes`, margin applied to the target column.
    pub logits: Vec<T>,
    /// Plain cosine argmax equals the label.
    pub correct: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct LossGradients<T> {
    /// With respect to the raw (unnormalized) features, `batch x dim`.
    pub features: Vec<T>,
    /// With respect to the raw class weights, `n_classes x dim`.
    pub weights: Vec<T>,
}

/// Forward pass of the margin loss. Labels are zero-based.
pub fn arcface_loss<T: Real>(
    features: Batch<'_, T>,
    labels: &[usize],
    weights: Batch<'_, T>,
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    Ok(evaluate(features, labels, weights, cfg, false)?.0)
}

/// Gradients of the mean loss with respect to raw features and raw class
/// weights, including both normalization Jacobians.
pub fn arcface_backward<T: Real>(
    features: Batch<'_, T>,
    labels: &[usize],
    weights: Batch<'_, T>,
    cfg: &LossConfig,
) -> Result<LossGradients<T>> {
    Ok(evaluate(features, labels, weights, cfg, true)?
        .1
        .expect("gradients requested"))
}

/// Forward and backward in one pass.
pub fn arcface<T: Real>(
    features: Batch<'_, T>,
    labels: &[usize],
    weights: Batch<'_, T>,
    cfg: &LossConfig,
) -> Result<(LossOutput<T>, LossGradients<T>)> {
    let (out, grads) = evaluate(features, labels, weights, cfg, true)?;
    Ok((out, grads.expect("gradients requested")))
}

/// Unit vector and norm, computed in f64.
pub(crate) fn normalize<T: Real>(v: &[T]) -> Result<(Vec<f64>, f64)> {
    let norm = v.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt();
    if !(norm >= MIN_NORM) {
        return Err(Error::NormalizationDegenerate(norm));
    }
    Ok((v.iter().map(|x| x.f64() / norm).collect(), norm))
}

/// `(g - u <u, g>) / norm`: pulls a gradient back through `v -> v / |v|`.
fn through_normalization(unit: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(g).map(|(u, g)| u * g).sum();
    unit.iter().zip(g).map(|(u, g)| (g - u * dot) / norm).collect()
}

fn evaluate<T: Real>(
    features: Batch<'_, T>,
    labels: &[usize],
    weights: Batch<'_, T>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossOutput<T>, Option<LossGradients<T>>)> {
    cfg.validate()?;
    let d = features.dim;
    assert_eq!(weights.dim, d, "feature and weight dimensions differ");
    let batch = features.rows();
    assert_eq!(labels.len(), batch, "one label per feature row");
    let n = weights.rows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            n_classes: n,
        });
    }
    let (s, m) = (cfg.scale, cfg.margin);

    let w_units: Vec<(Vec<f64>, f64)> = (0..n).map(|j| normalize(weights.row(j))).collect::<Result<_>>()?;

    let mut per_sample = Vec::with_capacity(batch);
    let mut logits = Vec::with_capacity(batch * n);
    let mut correct = Vec::with_capacity(batch);
    // dL/dcos, batch x n
    let mut g_cos = if want_grad { vec![0.0; batch * n] } else { Vec::new() };
    let mut f_units = Vec::with_capacity(batch);

    for (i, &y) in labels.iter().enumerate() {
        let (fu, fnorm) = normalize(features.row(i))?;
        let cos: Vec<f64> = w_units
            .iter()
            .map(|(wu, _)| wu.iter().zip(&fu).map(|(a, b)| a * b).sum())
            .collect();
        let c_t = cos[y].clamp(-1.0 + COS_EPS, 1.0 - COS_EPS);
        let theta = c_t.acos();
        let mut z: Vec<f64> = cos.iter().map(|c| s * c).collect();
        z[y] = s * (theta + m).cos();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum_exp.ln();
        per_sample.push(lse - z[y]);
        let argmax = cos
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &c)| if c > best.1 { (j, c) } else { best })
            .0;
        correct.push(argmax == y);
        logits.extend(z.iter().map(|&v| T::of(v)));

        if want_grad {
            let row = &mut g_cos[i * n..(i + 1) * n];
            for (j, g) in row.iter_mut().enumerate() {
                let p = (z[j] - lse).exp();
                let dz = if j == y { p - 1.0 } else { p };
                *g = dz * s / batch as f64;
            }
            let raw_t = cos[y];
            let clamped = raw_t <= -1.0 + COS_EPS || raw_t >= 1.0 - COS_EPS;
            row[y] *= if clamped {
                0.0
            } else {
                (theta + m).sin() / theta.sin()
            };
        }
        f_units.push((fu, fnorm));
    }

    let loss = per_sample.iter().sum::<f64>() / batch.max(1) as f64;
    let output = LossOutput {
        loss,
        per_sample,
        logits,
        correct,
    };
    if !want_grad {
        return Ok((output, None));
    }

    let mut g_feat = Vec::with_capacity(batch * d);
    let mut g_wu = vec![vec![0.0; d]; n];
    for (i, (fu, fnorm)) in f_units.iter().enumerate() {
        let row = &g_cos[i * n..(i + 1) * n];
        let mut g_fu = vec![0.0; d];
        for (j, &g) in row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wu = &w_units[j].0;
            for k in 0..d {
                g_fu[k] += g * wu[k];
                g_wu[j][k] += g * fu[k];
            }
        }
        g_feat.extend(through_normalization(fu, *fnorm, &g_fu).into_iter().map(T::of));
    }
    let mut g_w = Vec::with_capacity(n * d);
    for (j, (wu, wnorm)) in w_units.iter().enumerate() {
        g_w.extend(through_normalization(wu, *wnorm, &g_wu[j]).into_iter().map(T::of));
    }
    Ok((
        output,
        Some(LossGradients {
            features: g_feat,
            weights: g_w,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_loss_is_zero() {
        let f = [0.3, -1.2, 0.8];
        let w = [1.0, 2.0, -0.5];
        for cfg in [LossConfig::default(), LossConfig { scale: 3.0, margin: 0.0 }] {
            let (out, g) = arcface(Batch::new(&f[..], 3), &[0], Batch::new(&w[..], 3), &cfg).unwrap();
            assert_eq!(out.loss, 0.0);
            assert!(g.features.iter().chain(&g.weights).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_class_closed_form() {
        // f aligned with W_1, orthogonal to W_2, s = 1, m = 0: ln(1 + e^-1)
        let f = [1.0, 0.0];
        let w = [1.0, 0.0, 0.0, 1.0];
        let cfg = LossConfig { scale: 1.0, margin: 0.0 };
        let out = arcface_loss(Batch::new(&f[..], 2), &[0], Batch::new(&w[..], 2), &cfg).unwrap();
        let want = (1.0f64 + (-1.0f64).exp()).ln();
        assert!((want - 0.31326).abs() < 1e-5);
        // cos clamp moves the target logit by at most 1e-7
        assert!((out.loss - want).abs() < 1e-7, "{} vs {want}", out.loss);
    }

    #[test]
    fn label_out_of_range() {
        let f = [1.0, 0.0];
        let w = [1.0, 0.0, 0.0, 1.0];
        let err = arcface_loss(Batch::new(&f[..], 2), &[2], Batch::new(&w[..], 2), &LossConfig::default());
        assert!(matches!(err, Err(Error::LabelOutOfRange { label: 2, n_classes: 2 })));
    }

    #[test]
    fn zero_feature_is_degenerate() {
        let f = [0.0, 0.0];
        let w = [1.0, 0.0, 0.0, 1.0];
        let err = arcface_loss(Batch::new(&f[..], 2), &[0], Batch::new(&w[..], 2), &LossConfig::default());
        assert!(matches!(err, Err(Error::NormalizationDegenerate(_))));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LossConfig { scale: 0.0, margin: 0.1 }.validate().is_err());
        assert!(LossConfig { scale: 1.0, margin: 1.6 }.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
