//! Plain convolutional backbone: `len(conv_widths)` blocks of 3x3 stride-2
//! convolution + ReLU, global average pooling, and a linear layer to the
//! embedding dimension. The projection matrix `W` (one row per training
//! identity) lives next to it and is only used by the loss.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::real::{gemm, Mat, Real};
use crate::error::{Error, Result};
use crate::image::FaceImage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub embed_dim: usize,
    pub conv_widths: Vec<usize>,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Small CPU-trainable network.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            input_size: 112,
            embed_dim: 64,
            conv_widths: vec![8, 16, 32, 64],
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::InvalidConfig(format!("embed_dim must be >= 2, got {}", self.embed_dim)));
        }
        if self.n_classes < 1 {
            return Err(Error::InvalidConfig("n_classes must be >= 1".into()));
        }
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::InvalidConfig("conv_widths must be non-empty and positive".into()));
        }
        let div = 1usize << self.conv_widths.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size {} is not divisible by 2^{}",
                self.input_size,
                self.conv_widths.len()
            )));
        }
        Ok(())
    }

    /// (name, shape) of every parameter tensor in declaration order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in self.conv_widths.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), vec![c_out, c_in, 3, 3]));
            out.push((format!("conv{}.bias", i + 1), vec![c_out]));
            c_in = c_out;
        }
        out.push(("embed.weight".into(), vec![self.embed_dim, c_in]));
        out.push(("embed.bias".into(), vec![self.embed_dim]));
        out.push(("norm.running_mean".into(), vec![self.embed_dim]));
        out.push(("norm.running_var".into(), vec![self.embed_dim]));
        out.push(("proj.weight".into(), vec![self.n_classes, self.embed_dim]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    /// `c_out x (c_in * 9)`, kernel index `ci * 9 + ky * 3 + kx`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backbone parameters plus the projection matrix. The same type doubles as
/// the gradient and momentum container.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub convs: Vec<ConvLayer<T>>,
    /// `embed_dim x last_width`.
    pub embed_weight: Vec<T>,
    pub embed_bias: Vec<T>,
    /// Running per-dimension mean and variance of the embedding head output,
    /// used to standardize features at inference. Not trained by SGD.
    pub norm_mean: Vec<T>,
    pub norm_var: Vec<T>,
    /// `n_classes x embed_dim`, row `j` is the class weight `W_j`.
    pub proj: Vec<T>,
}

/// Variance floor of the feature standardization.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const NORM_MOMENTUM: f64 = 0.1;

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each conv block; index 0 is the normalized image.
    inputs: Vec<Vec<T>>,
    /// ReLU output of the last block.
    last: Vec<T>,
    pooled: Vec<T>,
    /// Head output, before standardization.
    pub feature: Vec<T>,
}

impl<T: Real> Network<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut convs = Vec::new();
        let mut c_in = 3;
        for &c_out in &config.conv_widths {
            convs.push(ConvLayer {
                c_in,
                c_out,
                weight: vec![T::zero(); c_out * c_in * 9],
                bias: vec![T::zero(); c_out],
            });
            c_in = c_out;
        }
        Self {
            config: config.clone(),
            convs,
            embed_weight: vec![T::zero(); config.embed_dim * c_in],
            embed_bias: vec![T::zero(); config.embed_dim],
            norm_mean: vec![T::zero(); config.embed_dim],
            norm_var: vec![T::one(); config.embed_dim],
            proj: vec![T::zero(); config.n_classes * config.embed_dim],
        }
    }

    /// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, projection
    /// rows drawn from a unit Gaussian and normalized.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(config);
        for layer in &mut net.convs {
            kaiming_uniform(&mut layer.weight, layer.c_in * 9, &mut rng);
        }
        let last = net.last_width();
        kaiming_uniform(&mut net.embed_weight, last, &mut rng);
        let d = config.embed_dim;
        for row in net.proj.chunks_mut(d) {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::of(z);
            }
            let norm = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v = T::of(v.f64() / norm);
            }
        }
        Ok(net)
    }

    pub fn last_width(&self) -> usize {
        self.convs.last().map(|l| l.c_out).unwrap_or(3)
    }

    /// Every stored tensor in declaration order, running statistics included.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.convs {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.embed_weight);
        out.push(&self.embed_bias);
        out.push(&self.norm_mean);
        out.push(&self.norm_var);
        out.push(&self.proj);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.convs {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.embed_weight);
        out.push(&mut self.embed_bias);
        out.push(&mut self.norm_mean);
        out.push(&mut self.norm_var);
        out.push(&mut self.proj);
        out
    }

    /// Trainable tensors only, in declaration order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = self.tensors();
        out.drain(out.len() - 3..out.len() - 1);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.tensors_mut();
        out.drain(out.len() - 3..out.len() - 1);
        out
    }

    /// Standardizes a head output with the running statistics.
    pub fn standardize(&self, feature: &mut [T]) {
        for ((f, &m), &v) in feature.iter_mut().zip(&self.norm_mean).zip(&self.norm_var) {
            *f = T::of((f.f64() - m.f64()) / (v.f64() + NORM_EPS).sqrt());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other` over the trainable tensors.
    pub fn add_assign(&mut self, other: &Network<T>) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.params_mut() {
            for x in t.iter_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut out = Network::<U>::zeros(&self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::of(s.f64());
            }
        }
        out
    }

    /// Maps 0-255 RGB pixels to `[-1, 1]` in channel-major layout.
    pub fn input_tensor(&self, image: &FaceImage) -> Result<Vec<T>> {
        let s = self.config.input_size;
        if image.width() != s || image.height() != s {
            return Err(Error::DimMismatch {
                expected: (s, s),
                actual: image.dims(),
            });
        }
        let plane = s * s;
        let mut x = vec![T::zero(); 3 * plane];
        for (i, px) in image.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                x[c * plane + i] = T::of(px[c] as f64 / 127.5 - 1.0);
            }
        }
        Ok(x)
    }

    /// Pre-normalization feature and the activations needed for backprop.
    pub fn forward_cached(&self, image: &FaceImage) -> Result<ForwardCache<T>> {
        let mut x = self.input_tensor(image)?;
        let mut size = self.config.input_size;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut cols = Vec::new();
        for layer in &self.convs {
            let out_size = size / 2;
            let n = out_size * out_size;
            im2col(&x, layer.c_in, size, &mut cols);
            let mut y = vec![T::zero(); layer.c_out * n];
            gemm(
                Mat::new(&layer.weight, layer.c_out, layer.c_in * 9),
                Mat::new(&cols, layer.c_in * 9, n),
                &mut y,
                false,
            );
            for (row, &b) in y.chunks_mut(n).zip(&layer.bias) {
                for v in row.iter_mut() {
                    let z = *v + b;
                    *v = if z > T::zero() { z } else { T::zero() };
                }
            }
            check_finite(&y, "conv block")?;
            inputs.push(std::mem::replace(&mut x, y));
            size = out_size;
        }
        let plane = size * size;
        let inv = T::of(1.0 / plane as f64);
        let pooled: Vec<T> = x
            .chunks(plane)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        let d = self.config.embed_dim;
        let mut feature = self.embed_bias.clone();
        gemm(
            Mat::new(&self.embed_weight, d, pooled.len()),
            Mat::new(&pooled, pooled.len(), 1),
            &mut feature,
            true,
        );
        check_finite(&feature, "embedding head")?;
        Ok(ForwardCache {
            inputs,
            last: x,
            pooled,
            feature,
        })
    }

    /// Inference feature: head output standardized with the running
    /// statistics, before L2 normalization.
    pub fn feature(&self, image: &FaceImage) -> Result<Vec<T>> {
        let mut f = self.forward_cached(image)?.feature;
        self.standardize(&mut f);
        Ok(f)
    }

    /// Accumulates into `grad` the backbone gradients for one sample given
    /// the loss gradient with respect to its head output.
    /// Projection gradients are handled by the loss.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_feature: &[T], grad: &mut Network<T>) {
        let d = self.config.embed_dim;
        let c_last = self.last_width();
        // embed = W_e * pooled + b_e
        for (i, &g) in grad_feature.iter().enumerate() {
            grad.embed_bias[i] += g;
            let row = &mut grad.embed_weight[i * c_last..(i + 1) * c_last];
            for (r, &p) in row.iter_mut().zip(&cache.pooled) {
                *r += g * p;
            }
        }
        let mut g_pooled = vec![T::zero(); c_last];
        gemm(
            Mat::new(&self.embed_weight, d, c_last).t(),
            Mat::new(grad_feature, d, 1),
            &mut g_pooled,
            false,
        );
        let mut size = self.config.input_size >> self.convs.len();
        let plane = size * size;
        let inv = T::of(1.0 / plane as f64);
        let mut g_out: Vec<T> = g_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
            .collect();
        let mut out_act: &[T] = &cache.last;
        let mut cols = Vec::new();
        let mut g_cols = Vec::new();
        for (li, layer) in self.convs.iter().enumerate().rev() {
            let n = size * size;
            let in_size = size * 2;
            // ReLU gate
            for (g, &a) in g_out.iter_mut().zip(out_act) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            let gl = &mut grad.convs[li];
            for (gb, row) in gl.bias.iter_mut().zip(g_out.chunks(n)) {
                *gb += row.iter().copied().sum::<T>();
            }
            let input = &cache.inputs[li];
            im2col(input, layer.c_in, in_size, &mut cols);
            let k = layer.c_in * 9;
            gemm(
                Mat::new(&g_out, layer.c_out, n),
                Mat::new(&cols, k, n).t(),
                &mut gl.weight,
                true,
            );
            if li > 0 {
                g_cols.clear();
                g_cols.resize(k * n, T::zero());
                gemm(
                    Mat::new(&layer.weight, layer.c_out, k).t(),
                    Mat::new(&g_out, layer.c_out, n),
                    &mut g_cols,
                    false,
                );
                g_out = col2im(&g_cols, layer.c_in, in_size);
                out_act = input;
            }
            size = in_size;
        }
    }
}

fn kaiming_uniform<T: Real>(w: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in w.iter_mut() {
        *v = T::of(rng.sample(dist));
    }
}

fn check_finite<T: Real>(values: &[T], stage: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(stage))
    }
}

/// Unfolds 3x3 / stride 2 / pad 1 patches of a `c x size x size` tensor into
/// a `(c*9) x (size/2)^2` matrix.
fn im2col<T: Real>(x: &[T], c: usize, size: usize, cols: &mut Vec<T>) {
    let out = size / 2;
    let n = out * out;
    cols.clear();
    cols.resize(c * 9 * n, T::zero());
    for ci in 0..c {
        let plane = &x[ci * size * size..(ci + 1) * size * size];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * size..(iy as usize + 1) * size];
                    let dst = &mut row[oy * out..(oy + 1) * out];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < size as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], c: usize, size: usize) -> Vec<T> {
    let out = size / 2;
    let n = out * out;
    let mut x = vec![T::zero(); c * size * size];
    for ci in 0..c {
        let plane = &mut x[ci * size * size..(ci + 1) * size * size];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..out {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * size..(iy as usize + 1) * size];
                    for ox in 0..out {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < size as isize {
                            dst[ix as usize] += row[oy * out + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            embed_dim: 4,
            conv_widths: vec![3, 4],
            n_classes: 3,
        }
    }

    fn test_image(size: usize, seed: u64) -> FaceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..size * size * 3).map(|_| rng.random_range(0.0..255.0f32)).collect();
        FaceImage::from_raw(size, size, data).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk(10).validate().is_ok());
        let mut c = tiny();
        c.input_size = 18;
        assert!(c.validate().is_err());
        c = tiny();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tensor_shapes_in_declaration_order() {
        let shapes = ModelConfig::desk(200).tensor_shapes();
        assert_eq!(shapes[0], ("conv1.weight".to_string(), vec![8, 3, 3, 3]));
        assert_eq!(shapes.last().unwrap(), &("proj.weight".to_string(), vec![200, 64]));
        let net = Network::<f32>::init(&ModelConfig::desk(200), 1).unwrap();
        let lens: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        let want: Vec<usize> = shapes.iter().map(|(_, s)| s.iter().product()).collect();
        assert_eq!(lens, want);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, size) = (2, 8);
        let x: Vec<f64> = (0..c * size * size).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let n = (size / 2) * (size / 2);
        let y: Vec<f64> = (0..c * 9 * n).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut cols = Vec::new();
        im2col(&x, c, size, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, c, size)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    /// Finite-difference check of the backbone gradient through a scalar
    /// objective `sum_i a_i * feature_i`.
    #[test]
    fn backbone_gradient_matches_finite_differences() {
        let cfg = tiny();
        let net = Network::<f64>::init(&cfg, 3).unwrap();
        let img = test_image(16, 9);
        let coeffs = [0.7, -1.3, 0.4, 2.0];
        let objective = |n: &Network<f64>| -> f64 {
            n.forward_cached(&img).unwrap().feature.iter().zip(coeffs).map(|(f, a)| f * a).sum()
        };
        let cache = net.forward_cached(&img).unwrap();
        let mut grad = Network::<f64>::zeros(&cfg);
        net.backward(&cache, &coeffs, &mut grad);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let n_tensors = net.params().len() - 1; // projection is untouched here
        for t in 0..n_tensors {
            let len = net.params()[t].len();
            for i in 0..len {
                let mut plus = net.clone();
                plus.params_mut()[t][i] += h;
                let mut minus = net.clone();
                minus.params_mut()[t][i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let analytic = grad.params()[t][i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::<f32>::init(&tiny(), 5).unwrap();
        let img = test_image(16, 1);
        let a = net.feature(&img).unwrap();
        let b = net.feature(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let net = Network::<f32>::init(&tiny(), 5).unwrap();
        assert!(matches!(net.feature(&test_image(32, 1)), Err(Error::DimMismatch { .. })));
    }
}
