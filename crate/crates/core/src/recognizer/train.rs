//! Minibatch training on the CTC loss (Adam or momentum SGD), with optional
//! Gaussian-augmented fine-tuning.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use super::features::{log_power, power_spectrum, stack_context, FeatureConfig};
use super::model::{Layer, ModelParams};
use super::{ctc, Vocabulary};
use crate::error::{Error, Result};
use crate::signal::{add_gaussian_noise, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub features: FeatureConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub momentum: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Noise deviation for fine-tuning; 0 skips the fine-tuning stage.
    pub sigma_aug: f64,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            features: FeatureConfig::default(),
            epochs: 15,
            learning_rate: 3e-3,
            lr_decay: 0.85,
            optimizer: Optimizer::Adam,
            momentum: 0.9,
            batch_size: 4,
            clip_norm: 5.0,
            sigma_aug: 0.0,
            finetune_epochs: 1,
            finetune_learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.finetune_learning_rate > 0.0) {
            return Err(Error::domain("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::domain("momentum must lie in [0, 1)"));
        }
        if !(self.sigma_aug >= 0.0) {
            return Err(Error::domain("augmentation deviation must be >= 0"));
        }
        Ok(())
    }
}

/// Clean training followed, when `cfg.sigma_aug > 0`, by noisy fine-tuning.
pub fn train(utterances: &[Utterance], vocabulary: &Vocabulary, cfg: &TrainConfig) -> Result<ModelParams> {
    let params = train_clean(utterances, vocabulary, cfg, &mut |_, _| {})?;
    if cfg.sigma_aug > 0.0 {
        fine_tune(&params, utterances, cfg, &mut |_, _| {})
    } else {
        Ok(params)
    }
}

/// Clean stage. `on_epoch(epoch, mean_loss)` is called after each epoch.
pub fn train_clean(
    utterances: &[Utterance],
    vocabulary: &Vocabulary,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<ModelParams> {
    cfg.validate()?;
    if utterances.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let mut params = ModelParams::init(vocabulary.clone(), cfg.features, &cfg.hidden, cfg.seed);
    let mut log_feats = Vec::with_capacity(utterances.len());
    let mut labels = Vec::with_capacity(utterances.len());
    for u in utterances {
        log_feats.push(log_power(&power_spectrum(u.waveform.samples(), &cfg.features)?, &cfg.features));
        labels.push(vocabulary.encode(&u.transcript)?);
    }
    let (mean, std) = feature_stats(&log_feats, cfg.features.context);
    params.input_mean = mean;
    params.input_std = std;

    let mut opt = OptState::new(cfg.optimizer, &params);
    let root = RngStream::new(cfg.seed, 1);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        let order = shuffled(utterances.len(), &root.derive(epoch as u64));
        let loss = run_epoch(&mut params, &mut opt, &order, cfg, lr, epoch, |i| {
            Ok((stack_context(&log_feats[i], cfg.features.context), labels[i].as_slice()))
        })?;
        on_epoch(epoch, loss);
        lr *= cfg.lr_decay;
    }
    Ok(params)
}

/// Gaussian-augmented fine-tuning: every pass draws fresh noise of
/// deviation `cfg.sigma_aug` for each utterance.
pub fn fine_tune(
    base: &ModelParams,
    utterances: &[Utterance],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = base.clone();
    let labels = utterances
        .iter()
        .map(|u| params.vocabulary.encode(&u.transcript))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = OptState::new(cfg.optimizer, &params);
    let root = RngStream::new(cfg.seed, 2);
    let mut lr = cfg.finetune_learning_rate;
    let feat = params.features;
    let noisy_features = |stream: &RngStream| -> Result<Vec<Array2<f64>>> {
        utterances
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let noisy = add_gaussian_noise(&u.waveform, cfg.sigma_aug, &stream.derive(i as u64))?;
                Ok(log_power(&power_spectrum(noisy.samples(), &feat)?, &feat))
            })
            .collect()
    };
    for epoch in 0..cfg.finetune_epochs {
        let stream = root.derive(epoch as u64);
        let log_feats = noisy_features(&stream)?;
        if epoch == 0 {
            let (mean, std) = feature_stats(&log_feats, feat.context);
            renormalize(&mut params, mean, std);
        }
        let order = shuffled(utterances.len(), &stream.derive(u64::MAX));
        let loss = run_epoch(&mut params, &mut opt, &order, cfg, lr, epoch, |i| {
            Ok((stack_context(&log_feats[i], feat.context), labels[i].as_slice()))
        })?;
        on_epoch(epoch, loss);
        lr *= cfg.lr_decay;
    }
    Ok(params)
}

/// Swap in new input statistics and fold the change into the first layer,
/// so the network computes exactly the same function afterwards.
fn renormalize(params: &mut ModelParams, mean: Array1<f64>, std: Array1<f64>) {
    let first = &mut params.layers[0];
    let shift = (&mean - &params.input_mean) / &params.input_std;
    first.bias += &shift.dot(&first.weights);
    let scale = &std / &params.input_std;
    for (mut row, s) in first.weights.rows_mut().into_iter().zip(scale.iter()) {
        row *= *s;
    }
    params.input_mean = mean;
    params.input_std = std;
}

fn shuffled(n: usize, stream: &RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng());
    order
}

/// Per-dimension mean and deviation of stacked features over all frames.
fn feature_stats(log_feats: &[Array2<f64>], context: usize) -> (Array1<f64>, Array1<f64>) {
    let bins = log_feats[0].ncols();
    let mut sum = Array1::<f64>::zeros(bins);
    let mut sq = Array1::<f64>::zeros(bins);
    let mut count = 0.0;
    for f in log_feats {
        sum += &f.sum_axis(Axis(0));
        sq += &f.mapv(|v| v * v).sum_axis(Axis(0));
        count += f.nrows() as f64;
    }
    let mean = &sum / count;
    let std = (&sq / count - &mean * &mean).mapv(|v| v.max(0.0).sqrt().max(1e-3));
    let width = 2 * context + 1;
    let tile = |a: &Array1<f64>| Array1::from_iter((0..width).flat_map(|_| a.iter().copied()));
    (tile(&mean), tile(&std))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Heavy-ball SGD; `momentum` is the velocity decay.
    Sgd,
    /// Adam with `β1 = momentum`, `β2 = 0.999`.
    Adam,
}

struct OptState {
    kind: Optimizer,
    first: Vec<Layer>,
    second: Vec<Layer>,
    grads: Vec<Layer>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, p: &ModelParams) -> Self {
        let zeros = || p.layers.iter().map(|l| Layer::zeros(l.inputs(), l.outputs())).collect();
        Self {
            kind,
            first: zeros(),
            second: zeros(),
            grads: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, lr: f64, momentum: f64, clip: f64) {
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let norm = self
            .grads
            .iter()
            .map(|g| g.weights.iter().chain(&g.bias).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.t += 1;
        let c1 = 1.0 - momentum.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let kind = self.kind;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            let g = g * scale;
            match kind {
                Optimizer::Sgd => {
                    *m = momentum * *m - lr * g;
                    *p += *m;
                }
                Optimizer::Adam => {
                    *m = momentum * *m + (1.0 - momentum) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        };
        for (((layer, m), v), g) in params
            .layers
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
            .zip(&mut self.grads)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
    }
}

/// One pass over `order`; returns the mean per-label loss.
fn run_epoch<'a>(
    params: &mut ModelParams,
    opt: &mut OptState,
    order: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    epoch: usize,
    mut example: impl FnMut(usize) -> Result<(Array2<f64>, &'a [usize])>,
) -> Result<f64> {
    let mut total = 0.0;
    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        for &i in batch {
            let (stacked, labels) = example(i)?;
            let (logits, acts) = params.forward_normalized(params.normalize(&stacked));
            let (loss, mut g) = ctc::ctc_loss_and_grad(&logits, labels, Vocabulary::BLANK)?;
            let norm = labels.len().max(1) as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            total += loss / norm;
            g /= norm * batch.len() as f64;
            params.accumulate_grads_from_acts(&acts, &g, &mut opt.grads);
        }
        opt.step(params, lr, cfg.momentum, cfg.clip_norm);
        if params.layers.iter().any(|l| l.weights.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch, step });
        }
    }
    Ok(total / order.len() as f64)
}
