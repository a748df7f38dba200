use image::RgbImage;
use log::info;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{arcface, Batch, LossConfig};
use super::network::{ForwardCache, Network, NORM_EPS, NORM_MOMENTUM};
use super::EmbeddingModel;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::image::FaceImage;

/// Samples per parallel backward chunk. Chunk gradients are summed in chunk
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Zero-based epoch indices at which the learning rate is divided by 10.
    pub lr_drop_epochs: Vec<usize>,
    /// The margin ramps linearly from 0 to its configured value over this
    /// many epochs. 0 applies the full margin from the start.
    #[serde(default)]
    pub margin_warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub rng_seed: u64,
}

impl TrainSchedule {
    /// 30 epochs, batch 400, lr 0.1 divided by 10 after epochs 12, 15, 18.
    pub fn full_scale() -> Self {
        Self {
            epochs: 30,
            batch_size: 400,
            base_lr: 0.1,
            lr_drop_epochs: vec![12, 15, 18],
            margin_warmup_epochs: 0,
            momentum: 0.9,
            weight_decay: 5e-4,
            rng_seed: 0,
        }
    }

    /// Minutes-scale schedule for the synthetic corpus on one CPU core. The
    /// full margin from step one stalls training at this size, hence the ramp.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            base_lr: 0.05,
            lr_drop_epochs: vec![6, 8],
            margin_warmup_epochs: 5,
            momentum: 0.9,
            weight_decay: 5e-4,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !self.lr_drop_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("lr_drop_epochs must be strictly increasing".into()));
        }
        if self.lr_drop_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(Error::InvalidConfig("lr_drop_epochs must be below epochs".into()));
        }
        if !(self.base_lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr, momentum and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr * 0.1f64.powi(drops as i32)
    }

    /// Margin in effect during `epoch` for a configured final margin.
    pub fn margin_at(&self, epoch: usize, margin: f64) -> f64 {
        if epoch >= self.margin_warmup_epochs {
            margin
        } else {
            margin * epoch as f64 / self.margin_warmup_epochs as f64
        }
    }
}

/// One real, labeled training face.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    /// Zero-based identity class.
    pub class: usize,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub log: Vec<EpochLog>,
    /// Fake-labeled samples that reached preprocessing. Always 0: the guard
    /// rejects the corpus before any pixel is read.
    pub fake_samples_read: usize,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,train_accuracy,lr\n");
        for e in &self.log {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_loss, e.train_accuracy, e.lr));
        }
        out
    }
}

/// Trains the embedding model with SGD (momentum, weight decay, step
/// schedule) on real faces only. Every sample is aligned, cropped and masked
/// with the model's own preprocessing before the forward pass.
pub fn train(model: EmbeddingModel, corpus: &[TrainSample], schedule: &TrainSchedule) -> Result<TrainOutcome> {
    schedule.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let fakes = corpus.iter().filter(|s| s.label == Label::Fake).count();
    if fakes > 0 {
        return Err(Error::FakeInTrainSplit(fakes));
    }
    let n_classes = model.config().n_classes;
    if let Some(bad) = corpus.iter().find(|s| s.class >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad.class,
            n_classes,
        });
    }

    let mut model = model;
    let mut velocity = Network::<f32>::zeros(model.config());
    let mut fake_samples_read = 0usize;
    let mut log = Vec::with_capacity(schedule.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let d = model.config().embed_dim;

    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let loss_cfg = LossConfig {
            margin: schedule.margin_at(epoch, model.loss.margin),
            ..model.loss
        };
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sample_loss = vec![0.0f64; corpus.len()];
        let mut sample_correct = vec![false; corpus.len()];

        for batch_idx in order.chunks(schedule.batch_size) {
            fake_samples_read += batch_idx.iter().filter(|&&i| corpus[i].label == Label::Fake).count();
            let net = &model.net;
            let preprocess = &model.preprocess;
            let caches: Vec<ForwardCache<f32>> = batch_idx
                .par_iter()
                .map(|&i| {
                    let s = &corpus[i];
                    let (crop, _) = preprocess.run(&FaceImage::from_rgb8(&s.image), &s.landmarks)?;
                    net.forward_cached(&crop)
                })
                .collect::<Result<_>>()?;
            let raw: Vec<f32> = caches.iter().flat_map(|c| c.feature.iter().copied()).collect();
            let standardized = BatchStandardize::forward(&raw, d, net);
            let features: Vec<f32> = standardized.output.iter().map(|&v| v as f32).collect();
            let labels: Vec<usize> = batch_idx.iter().map(|&i| corpus[i].class).collect();
            let (out, mut grads) = arcface(
                Batch::new(&features, d),
                &labels,
                Batch::new(&net.proj, d),
                &loss_cfg,
            )?;
            grads.features = standardized.backward(&grads.features);
            if !out.loss.is_finite() {
                return Err(Error::DivergedTraining { epoch });
            }
            for (k, &i) in batch_idx.iter().enumerate() {
                sample_loss[i] = out.per_sample[k];
                sample_correct[i] = out.correct[k];
            }

            let partials: Vec<Network<f32>> = caches
                .par_chunks(GRAD_CHUNK)
                .zip(grads.features.par_chunks(GRAD_CHUNK * d))
                .map(|(cs, gf)| {
                    let mut g = Network::<f32>::zeros(&net.config);
                    for (cache, gfeat) in cs.iter().zip(gf.chunks(d)) {
                        net.backward(cache, gfeat, &mut g);
                    }
                    g
                })
                .collect();
            let mut grad = Network::<f32>::zeros(&net.config);
            for p in &partials {
                grad.add_assign(p);
            }
            grad.proj.copy_from_slice(&grads.weights);
            sgd_step(&mut model.net, &mut velocity, &grad, lr, schedule);
            standardized.update_running(&mut model.net);
            if !model.net.all_finite() {
                return Err(Error::DivergedTraining { epoch });
            }
        }

        let mean_loss = sample_loss.iter().sum::<f64>() / corpus.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::DivergedTraining { epoch });
        }
        let acc = sample_correct.iter().filter(|&&c| c).count() as f64 / corpus.len() as f64;
        info!("epoch {epoch}: loss {mean_loss:.4} acc {acc:.4} lr {lr}");
        log.push(EpochLog {
            epoch,
            mean_loss,
            train_accuracy: acc,
            lr,
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        fake_samples_read,
    })
}

/// Per-dimension standardization of a batch of head outputs. Batches of
/// one sample fall back to the running statistics.
struct BatchStandardize {
    dim: usize,
    output: Vec<f64>,
    /// Per-dimension batch mean and variance, when batch statistics were used.
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    inv_std: Vec<f64>,
}

impl BatchStandardize {
    fn forward(raw: &[f32], dim: usize, net: &Network<f32>) -> Self {
        let rows = raw.len() / dim;
        let (mean, var, batch_stats) = if rows >= 2 {
            let mut mean = vec![0.0f64; dim];
            for row in raw.chunks(dim) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0f64; dim];
            for row in raw.chunks(dim) {
                for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v as f64 - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            (mean.clone(), var.clone(), Some((mean, var)))
        } else {
            let mean = net.norm_mean.iter().map(|&v| v as f64).collect();
            let var = net.norm_var.iter().map(|&v| v as f64).collect();
            (mean, var, None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let output = raw
            .chunks(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&inv_std)
                    .map(|((&v, m), s)| (v as f64 - m) * s)
            })
            .collect();
        Self {
            dim,
            output,
            batch_stats,
            inv_std,
        }
    }

    /// `dx = (g - mean(g) - y * mean(g * y)) / std` per dimension with batch
    /// statistics, `g / std` otherwise.
    fn backward(&self, grad_out: &[f32]) -> Vec<f32> {
        let d = self.dim;
        if self.batch_stats.is_none() {
            return grad_out
                .chunks(d)
                .flat_map(|row| row.iter().zip(&self.inv_std).map(|(&g, s)| (g as f64 * s) as f32))
                .collect();
        }
        let rows = grad_out.len() / d;
        let mut g_mean = vec![0.0f64; d];
        let mut gy_mean = vec![0.0f64; d];
        for (g_row, y_row) in grad_out.chunks(d).zip(self.output.chunks(d)) {
            for j in 0..d {
                g_mean[j] += g_row[j] as f64;
                gy_mean[j] += g_row[j] as f64 * y_row[j];
            }
        }
        g_mean.iter_mut().chain(gy_mean.iter_mut()).for_each(|v| *v /= rows as f64);
        let (g_mean, gy_mean) = (&g_mean, &gy_mean);
        grad_out
            .chunks(d)
            .zip(self.output.chunks(d))
            .flat_map(|(g_row, y_row)| {
                (0..d).map(move |j| ((g_row[j] as f64 - g_mean[j] - y_row[j] * gy_mean[j]) * self.inv_std[j]) as f32)
            })
            .collect()
    }

    fn update_running(&self, net: &mut Network<f32>) {
        let Some((mean, var)) = &self.batch_stats else {
            return;
        };
        let rows = (self.output.len() / self.dim) as f64;
        let unbiased = rows / (rows - 1.0);
        let mom = NORM_MOMENTUM;
        for (r, m) in net.norm_mean.iter_mut().zip(mean) {
            *r = ((1.0 - mom) * *r as f64 + mom * m) as f32;
        }
        for (r, v) in net.norm_var.iter_mut().zip(var) {
            *r = ((1.0 - mom) * *r as f64 + mom * v * unbiased) as f32;
        }
    }
}

/// `v = momentum * v + (g + wd * p); p -= lr * v`
fn sgd_step(net: &mut Network<f32>, velocity: &mut Network<f32>, grad: &Network<f32>, lr: f64, s: &TrainSchedule) {
    let (lr, mu, wd) = (lr as f32, s.momentum as f32, s.weight_decay as f32);
    for ((p, v), g) in net
        .params_mut()
        .into_iter()
        .zip(velocity.params_mut())
        .zip(grad.params())
    {
        for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_learning_rates() {
        let s = TrainSchedule::full_scale();
        assert_eq!((s.epochs, s.batch_size), (30, 400));
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(11), 0.1);
        assert!((s.lr_at(12) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(15) - 0.001).abs() < 1e-15);
        assert!((s.lr_at(29) - 0.0001).abs() < 1e-15);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn batch_standardize_gradient_matches_finite_differences() {
        let cfg = super::super::ModelConfig {
            input_size: 16,
            embed_dim: 3,
            conv_widths: vec![2],
            n_classes: 2,
        };
        let net = Network::<f32>::zeros(&cfg);
        let raw = [0.3f32, -1.0, 2.0, 1.1, 0.4, -0.7, -0.2, 0.9, 0.1, 1.7, -1.3, 0.5];
        let coeffs = [0.5f32, -0.2, 1.0, 0.3, 0.8, -1.1, 0.6, 0.2, -0.4, 1.2, 0.7, -0.9];
        let objective = |x: &[f32]| -> f64 {
            let out = BatchStandardize::forward(x, 3, &net).output;
            out.iter().zip(&coeffs).map(|(y, &c)| y * c as f64).sum()
        };
        let analytic = BatchStandardize::forward(&raw, 3, &net).backward(&coeffs);
        let h = 1e-2f32;
        for i in 0..raw.len() {
            let (mut p, mut m) = (raw, raw);
            p[i] += h;
            m[i] -= h;
            let numeric = (objective(&p) - objective(&m)) / (2.0 * h as f64);
            assert!((numeric - analytic[i] as f64).abs() < 2e-3, "{i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = TrainSchedule::desk();
        s.lr_drop_epochs = vec![5, 5];
        assert!(s.validate().is_err());
        s.lr_drop_epochs = vec![10];
        assert!(s.validate().is_err());
    }

    #[test]
    fn margin_ramps_to_full() {
        let mut s = TrainSchedule::desk();
        s.margin_warmup_epochs = 4;
        let m: Vec<f64> = (0..6).map(|e| s.margin_at(e, 0.5)).collect();
        assert_eq!(m, vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.5]);
        s.margin_warmup_epochs = 0;
        assert_eq!(s.margin_at(0, 0.5), 0.5);
    }
}
