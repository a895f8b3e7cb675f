//! Per-frame MLP over context-stacked features, with exact backprop to both
//! the parameters and the input waveform.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize_backward, featurize_cached, FeatureCache, FeatureConfig};
use super::{ctc, LogitsSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::signal::{Perturbation, Waveform, SAMPLE_RATE};
use crate::voting::Transcript;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Dense layer `y = x·W + b` with `W` of shape `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocabulary: Vocabulary,
    pub features: FeatureConfig,
    /// Per-dimension normalization of stacked features: `(f - mean) / std`.
    pub input_mean: Array1<f64>,
    pub input_std: Array1<f64>,
    /// `tanh` follows every layer except the last.
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    features: FeatureCache,
    /// Input of each layer; the first entry is the normalized feature matrix.
    activations: Vec<Array2<f64>>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, identity normalization.
    pub fn init(vocabulary: Vocabulary, features: FeatureConfig, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = features.stacked_dim();
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(vocabulary.num_classes());
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self {
            vocabulary,
            features,
            input_mean: Array1::zeros(dim),
            input_std: Array1::ones(dim),
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let dim = self.features.stacked_dim();
        if self.input_mean.len() != dim || self.input_std.len() != dim {
            return Err(Error::Shape(format!(
                "normalization vectors must have length {dim}"
            )));
        }
        if self.input_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::domain("normalization deviations must be positive"));
        }
        let mut width = dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs() != width || l.bias.len() != l.outputs() {
                return Err(Error::Shape(format!(
                    "layer {i} has shape {}x{} (+{}) but receives {width} inputs",
                    l.inputs(),
                    l.outputs(),
                    l.bias.len()
                )));
            }
            width = l.outputs();
        }
        if self.layers.is_empty() || width != self.vocabulary.num_classes() {
            return Err(Error::Shape(format!(
                "network emits {width} classes, vocabulary has {}",
                self.vocabulary.num_classes()
            )));
        }
        let finite = self.input_mean.iter().chain(&self.input_std).all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::domain("model parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn frame_times(&self, frames: usize) -> (Vec<f64>, f64) {
        let hop = self.features.hop_length as f64 / SAMPLE_RATE as f64;
        ((0..frames).map(|t| t as f64 * hop).collect(), hop)
    }

    pub fn normalize(&self, stacked: &Array2<f64>) -> Array2<f64> {
        (stacked - &self.input_mean) / &self.input_std
    }

    /// Network pass on normalized features. Returns logits and layer inputs.
    pub fn forward_normalized(&self, z: Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut acts = vec![z];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = acts[i].dot(&l.weights) + &l.bias;
            if i < last {
                a.mapv_inplace(f64::tanh);
            }
            acts.push(a);
        }
        let logits = acts.pop().expect("at least one layer");
        (logits, acts)
    }

    pub fn forward(&self, x: &Waveform) -> Result<LogitsSequence> {
        Ok(self.forward_cached(x.samples())?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(LogitsSequence, ForwardCache)> {
        let (stacked, features) = featurize_cached(x, &self.features)?;
        let (values, activations) = self.forward_normalized(self.normalize(&stacked));
        let (frame_times, hop_secs) = self.frame_times(values.nrows());
        Ok((
            LogitsSequence {
                values,
                frame_times,
                hop_secs,
            },
            ForwardCache {
                features,
                activations,
            },
        ))
    }

    /// Gradient with respect to each layer input, from the last hidden layer
    /// down to the normalized features. Parameter gradients are accumulated
    /// into `param_grads` when given.
    fn backprop(
        &self,
        acts: &[Array2<f64>],
        grad_logits: &Array2<f64>,
        mut param_grads: Option<&mut [Layer]>,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            if let Some(grads) = param_grads.as_deref_mut() {
                grads[i].weights += &acts[i].t().dot(&g);
                grads[i].bias += &g.sum_axis(Axis(0));
            }
            if i == 0 && !need_input {
                return None;
            }
            let mut below = g.dot(&self.layers[i].weights.t());
            if i > 0 {
                below.zip_mut_with(&acts[i], |gv, &h| *gv *= 1.0 - h * h);
            }
            g = below;
        }
        Some(g)
    }

    /// Accumulate parameter gradients for one utterance.
    pub fn accumulate_param_grads(
        &self,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
        grads: &mut [Layer],
    ) {
        self.backprop(&cache.activations, grad_logits, Some(grads), false);
    }

    pub(crate) fn accumulate_grads_from_acts(
        &self,
        acts: &[Array2<f64>],
        grad_logits: &Array2<f64>,
        grads: &mut [Layer],
    ) {
        self.backprop(acts, grad_logits, Some(grads), false);
    }

    /// Gradient of a loss with respect to the stacked (unnormalized) features.
    pub fn feature_grad(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Array2<f64> {
        let gz = self
            .backprop(&cache.activations, grad_logits, None, true)
            .expect("input gradient requested");
        gz / &self.input_std
    }

    /// Gradient with respect to the waveform samples.
    pub fn input_grad(&self, cache: &ForwardCache, grad_logits: &Array2<f64>) -> Vec<f64> {
        featurize_backward(&cache.features, &self.feature_grad(cache, grad_logits), &self.features)
    }

    /// CTC loss of `target` on `x` and its gradient with respect to `x`.
    pub fn loss_and_input_grad(&self, x: &[f64], target: &Transcript) -> Result<(f64, Vec<f64>)> {
        let labels = self.vocabulary.encode(target)?;
        let (logits, cache) = self.forward_cached(x)?;
        let (loss, g) = ctc::ctc_loss_and_grad(&logits.values, &labels, Vocabulary::BLANK)?;
        Ok((loss, self.input_grad(&cache, &g)))
    }

    pub fn loss(&self, x: &[f64], target: &Transcript) -> Result<f64> {
        let labels = self.vocabulary.encode(target)?;
        let (logits, _) = self.forward_cached(x)?;
        ctc::ctc_loss_labels(&logits.values, &labels, Vocabulary::BLANK)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `∂L/∂x` of the CTC loss for `target`.
pub fn grad_input(params: &ModelParams, x: &Waveform, target: &Transcript) -> Result<Perturbation> {
    Ok(Perturbation::new(params.loss_and_input_grad(x.samples(), target)?.1))
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    vocabulary: Vocabulary,
    features: FeatureConfig,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    layers: Vec<LayerFile>,
}

impl From<&ModelParams> for ModelFile {
    fn from(p: &ModelParams) -> Self {
        Self {
            version: MODEL_FORMAT_VERSION,
            vocabulary: p.vocabulary.clone(),
            features: p.features,
            input_mean: p.input_mean.to_vec(),
            input_std: p.input_std.to_vec(),
            layers: p
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.inputs(),
                    cols: l.outputs(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse {
                context: "model file".into(),
                detail: format!("unsupported version {}", f.version),
            });
        }
        let layers = f
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights).map_err(|e| {
                    Error::Shape(format!("layer {i} weights do not match {}x{}: {e}", l.rows, l.cols))
                })?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = ModelParams {
            vocabulary: f.vocabulary,
            features: f.features,
            input_mean: Array1::from(f.input_mean),
            input_std: Array1::from(f.input_std),
            layers,
        };
        p.validate()?;
        Ok(p)
    }
}
