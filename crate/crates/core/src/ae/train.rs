use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{AeModel, Gradients};
use crate::error::{Error, Result};
use crate::mask::{iou, Mask};

/// Samples per parallel work unit. Gradients are summed inside a chunk and
/// then across chunks in index order, so results do not depend on the number
/// of worker threads.
const CHUNK: usize = 8;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Indices of layers whose parameters are held fixed.
    pub frozen_layers: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 300,
            lr0: 1e-3,
            lr_halving_period: 60,
            noise_sigma: 0.2,
            seed: 0,
            frozen_layers: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let halvings = epoch.checked_div(self.lr_halving_period).unwrap_or(0);
        self.lr0 * 0.5f64.powi(halvings as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-sample loss over the epoch's training presentations.
    pub mean_loss: f64,
    /// Mean IoU of the thresholded reconstructions against the clean targets.
    pub mean_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,mean_loss,mean_iou\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.learning_rate, e.mean_loss, e.mean_iou));
        }
        s
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &AeModel) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut AeModel, g: &Gradients, lr: f64, frozen: &[usize]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            if frozen.contains(&i) {
                continue;
            }
            let Some((w, b)) = layer.params_mut() else { continue };
            let (gw, gb) = &g.layers[i];
            let (mw, mb) = &mut self.m.layers[i];
            let (vw, vb) = &mut self.v.layers[i];
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for j in 0..p.len() {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                    p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                }
            };
            update(w, gw, mw, vw);
            update(b, gb, mb, vb);
        }
    }
}

/// Fits `model` to reconstruct clean canonical masks from noisy copies.
///
/// `on_epoch` is called after every epoch, e.g. for progress logging.
pub fn train(
    model: &mut AeModel,
    corpus: &[Mask],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {} must be finite and >= 0", config.noise_sigma)));
    }
    let size = model.input_size();
    let target_masks: Vec<Mask> = corpus.iter().map(|m| m.canonicalize(size)).collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = target_masks
        .iter()
        .map(|m| m.data().iter().map(|&v| v as f64).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport { epochs: Vec::with_capacity(config.epochs) };

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut iou_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            // noise is drawn sequentially so the stream is thread-independent
            let inputs: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    targets[i]
                        .iter()
                        .map(|&t| {
                            if config.noise_sigma > 0.0 {
                                (t + noise.sample(&mut rng)).clamp(0.0, 1.0)
                            } else {
                                t
                            }
                        })
                        .collect()
                })
                .collect();
            let m: &AeModel = model;
            let partials: Vec<(f64, f64, Gradients)> = batch
                .par_chunks(CHUNK)
                .zip(inputs.par_chunks(CHUNK))
                .map(|(idx, xs)| -> Result<(f64, f64, Gradients)> {
                    let mut g = Gradients::zeros_like(m);
                    let (mut l, mut q) = (0.0, 0.0);
                    for (&i, x) in idx.iter().zip(xs) {
                        let (loss, gi, recon) = m.backward_with_output(x, &targets[i])?;
                        g.add_assign(&gi);
                        l += loss;
                        let rm = Mask::from_fn(size, size, |px, py| recon[py * size + px] > 0.5)?;
                        q += iou(&rm, &target_masks[i])?;
                    }
                    Ok((l, q, g))
                })
                .collect::<Result<_>>()?;
            let mut grad = Gradients::zeros_like(model);
            for (l, q, g) in &partials {
                grad.add_assign(g);
                loss_sum += l;
                iou_sum += q;
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.step(model, &grad, lr, &config.frozen_layers);
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / corpus.len() as f64,
            mean_iou: iou_sum / corpus.len() as f64,
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
