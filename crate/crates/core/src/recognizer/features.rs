//! Differentiable log-power front end with context stacking.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::enhance::{forward_fft, hann_periodic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    /// Lowest `n_bins` FFT bins are kept (51 bins of 80 Hz cover 0–4 kHz).
    pub n_bins: usize,
    /// Frames stacked on each side of the centre frame.
    pub context: usize,
    pub kappa: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_length: 200,
            hop_length: 100,
            n_bins: 51,
            context: 4,
            kappa: 1e-6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.hop_length == 0 {
            return Err(Error::domain("frame and hop length must be positive"));
        }
        if self.n_bins == 0 || self.n_bins > self.frame_length / 2 + 1 {
            return Err(Error::domain(format!(
                "n_bins {} outside 1..={}",
                self.n_bins,
                self.frame_length / 2 + 1
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::domain("kappa must be positive"));
        }
        Ok(())
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.frame_length {
            return Err(Error::domain(format!(
                "input of {len} samples is shorter than one {}-sample frame",
                self.frame_length
            )));
        }
        Ok((len - self.frame_length) / self.hop_length + 1)
    }

    /// Width of a context-stacked feature row.
    pub fn stacked_dim(&self) -> usize {
        self.n_bins * (2 * self.context + 1)
    }
}

/// Per-frame kept-bin spectra and powers, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    spectra: Array2<Complex64>,
    power: Array2<f64>,
    signal_len: usize,
}

impl FeatureCache {
    pub fn power(&self) -> &Array2<f64> {
        &self.power
    }

    pub fn num_frames(&self) -> usize {
        self.power.nrows()
    }
}

/// Windowed frame power spectra `|X[t, k]|²` for the kept bins.
pub fn power_spectrum(x: &[f64], cfg: &FeatureConfig) -> Result<FeatureCache> {
    cfg.validate()?;
    let frames = cfg.num_frames(x.len())?;
    let n = cfg.frame_length;
    let window = hann_periodic(n);
    let fft = forward_fft(n);
    let mut spectra = Array2::zeros((frames, cfg.n_bins));
    let mut power = Array2::zeros((frames, cfg.n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let off = t * cfg.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(window[i] * x[off + i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..cfg.n_bins {
            spectra[[t, k]] = buf[k];
            power[[t, k]] = buf[k].norm_sqr();
        }
    }
    Ok(FeatureCache {
        spectra,
        power,
        signal_len: x.len(),
    })
}

/// `log(P + κ)` per frame and bin.
pub fn log_power(cache: &FeatureCache, cfg: &FeatureConfig) -> Array2<f64> {
    cache.power.mapv(|p| (p + cfg.kappa).ln())
}

/// Row `t` is the concatenation of frames `t-c ..= t+c`, clamped at the edges.
pub fn stack_context(frames: &Array2<f64>, context: usize) -> Array2<f64> {
    let (t_len, b) = frames.dim();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((t_len, b * width));
    for t in 0..t_len {
        for j in 0..width {
            let src = (t + j).saturating_sub(context).min(t_len - 1);
            out.row_mut(t)
                .slice_mut(ndarray::s![j * b..(j + 1) * b])
                .assign(&frames.row(src));
        }
    }
    out
}

/// Adjoint of [`stack_context`].
pub fn unstack_context(grad: &Array2<f64>, bins: usize, context: usize) -> Array2<f64> {
    let t_len = grad.nrows();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((t_len, bins));
    for t in 0..t_len {
        for j in 0..width {
            let src = (t + j).saturating_sub(context).min(t_len - 1);
            let g = grad.row(t);
            let mut row = out.row_mut(src);
            row += &g.slice(ndarray::s![j * bins..(j + 1) * bins]);
        }
    }
    out
}

/// Context-stacked log-power features, `T × n_bins·(2c+1)`.
pub fn featurize(x: &[f64], cfg: &FeatureConfig) -> Result<Array2<f64>> {
    Ok(featurize_cached(x, cfg)?.0)
}

pub fn featurize_cached(x: &[f64], cfg: &FeatureConfig) -> Result<(Array2<f64>, FeatureCache)> {
    let cache = power_spectrum(x, cfg)?;
    let stacked = stack_context(&log_power(&cache, cfg), cfg.context);
    Ok((stacked, cache))
}

/// Gradient with respect to the waveform given the gradient of the stacked
/// features.
///
/// For one frame with `Y[k] = ∂L/∂P[k] · conj(X[k])` on the kept bins, the
/// sample gradient is `2·w[n]·Re(FFT(Y)[n])`.
pub fn featurize_backward(
    cache: &FeatureCache,
    grad_stacked: &Array2<f64>,
    cfg: &FeatureConfig,
) -> Vec<f64> {
    let grad_log = unstack_context(grad_stacked, cfg.n_bins, cfg.context);
    let n = cfg.frame_length;
    let window = hann_periodic(n);
    let fft = forward_fft(n);
    let mut gx = vec![0.0; cache.signal_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..cache.num_frames() {
        buf.fill(Complex64::new(0.0, 0.0));
        for k in 0..cfg.n_bins {
            let gp = grad_log[[t, k]] / (cache.power[[t, k]] + cfg.kappa);
            buf[k] = cache.spectra[[t, k]].conj() * gp;
        }
        fft.process(&mut buf);
        let off = t * cfg.hop_length;
        for i in 0..n {
            gx[off + i] += 2.0 * window[i] * buf[i].re;
        }
    }
    gx
}
