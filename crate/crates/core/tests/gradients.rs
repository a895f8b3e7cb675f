//! Analytic gradients against central finite differences.

mod common;

use asr_smooth::recognizer::features::{featurize, featurize_backward, featurize_cached};
use asr_smooth::recognizer::{FeatureConfig, ModelParams, Vocabulary};
use asr_smooth::signal::RngStream;
use common::{fixture, rel_err};
use ndarray::Array2;
use rand::Rng;

const COORDS: usize = 24;
const TOL: f64 = 1e-4;

fn weights(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::new(seed, 0).rng();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn featurizer_gradient() {
    let (corpus, _) = fixture();
    let x = corpus.test[0].waveform.samples().to_vec();
    let cfg = FeatureConfig::default();
    let (feats, cache) = featurize_cached(&x, &cfg).unwrap();
    let c = weights(feats.nrows(), feats.ncols(), 1);
    let grad = featurize_backward(&cache, &c, &cfg);
    let objective = |x: &[f64]| (&featurize(x, &cfg).unwrap() * &c).sum();
    let mut rng = RngStream::new(2, 0).rng();
    let h = 1e-6;
    for _ in 0..COORDS {
        let i = rng.random_range(800..x.len() - 800);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
        assert!(rel_err(grad[i], fd) < TOL, "sample {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn network_gradient() {
    let (corpus, params) = fixture();
    let x = corpus.test[1].waveform.samples();
    let (logits, cache) = params.forward_cached(x).unwrap();
    let c = weights(logits.values.nrows(), logits.values.ncols(), 3);
    let grad = params.feature_grad(&cache, &c);
    let stacked = featurize(x, &params.features).unwrap();
    let objective = |s: &Array2<f64>| (&params.forward_normalized(params.normalize(s)).0 * &c).sum();
    let mut rng = RngStream::new(4, 0).rng();
    let h = 1e-5;
    for _ in 0..COORDS {
        let (t, j) = (rng.random_range(0..stacked.nrows()), rng.random_range(0..stacked.ncols()));
        let mut sp = stacked.clone();
        let mut sm = stacked.clone();
        sp[[t, j]] += h;
        sm[[t, j]] -= h;
        let fd = (objective(&sp) - objective(&sm)) / (2.0 * h);
        assert!(rel_err(grad[[t, j]], fd) < TOL, "({t},{j}): {} vs {fd}", grad[[t, j]]);
    }
}

#[test]
fn end_to_end_input_gradient() {
    let (corpus, params) = fixture();
    let u = &corpus.test[2];
    let x = u.waveform.samples().to_vec();
    let (_, grad) = params.loss_and_input_grad(&x, &u.transcript).unwrap();
    let mut rng = RngStream::new(5, 0).rng();
    let h = 1e-6;
    for _ in 0..COORDS {
        let i = rng.random_range(800..x.len() - 800);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (params.loss(&xp, &u.transcript).unwrap() - params.loss(&xm, &u.transcript).unwrap()) / (2.0 * h);
        assert!(rel_err(grad[i], fd) < TOL, "sample {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn untrained_model_gradient() {
    let params = ModelParams::init(Vocabulary::new(" ab").unwrap(), FeatureConfig::default(), &[8], 3);
    let x: Vec<f64> = RngStream::new(6, 0).gaussian(3000, 0.05);
    let target = "ab ba".parse().unwrap();
    let (_, grad) = params.loss_and_input_grad(&x, &target).unwrap();
    let h = 1e-6;
    for i in (500..2500).step_by(97).take(COORDS) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (params.loss(&xp, &target).unwrap() - params.loss(&xm, &target).unwrap()) / (2.0 * h);
        assert!(rel_err(grad[i], fd) < TOL, "sample {i}: {} vs {fd}", grad[i]);
    }
}
