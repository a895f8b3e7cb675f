//! STFT analysis/synthesis and decision-directed a-priori-SNR Wiener enhancement.
//!
//! The STFT pads `frame_length - hop_length` zeros in front of the signal and
//! enough at the back that every real sample is covered by the same number of
//! frames. Synthesis is weighted overlap-add normalized by the summed squared
//! window, so `istft(stft(x)) == x` up to rounding and any per-cell gain in
//! `[0, 1]` cannot raise the output energy above the input energy.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePsdMode {
    /// Noise PSD is `σ²·Σw²`, known in closed form for injected white noise.
    AnalyticSigma,
    /// Noise PSD is the mean periodogram of the first six frames.
    LeadingFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub dd_alpha: f64,
    pub gain_floor: f64,
    pub noise_psd_mode: NoisePsdMode,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            frame_length: 512,
            hop_length: 128,
            dd_alpha: 0.98,
            gain_floor: 0.1,
            noise_psd_mode: NoisePsdMode::AnalyticSigma,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length < 2 || self.hop_length == 0 {
            return Err(Error::domain("frame and hop lengths must be positive"));
        }
        if self.frame_length % self.hop_length != 0 {
            return Err(Error::domain(format!(
                "hop {} does not divide frame length {}",
                self.hop_length, self.frame_length
            )));
        }
        if !(0.0..=1.0).contains(&self.dd_alpha) {
            return Err(Error::domain("dd_alpha must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gain_floor) {
            return Err(Error::domain("gain_floor must lie in [0, 1]"));
        }
        Ok(())
    }

    fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.frame_length - self.hop_length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `F × (frame_length/2 + 1)` one-sided spectra.
    pub frames: Vec<Vec<Complex64>>,
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: &'static str,
    /// Number of real samples the spectrogram was computed from.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }
}

pub fn stft(x: &Waveform, cfg: &EnhanceConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.frame_length;
    let hop = cfg.hop_length;
    if x.len() < n {
        return Err(Error::domain(format!(
            "input of {} samples is shorter than one frame ({n})",
            x.len()
        )));
    }
    let pad = cfg.front_pad();
    let num_frames = (pad + x.len() - 1) / hop + 1;
    let padded_len = (num_frames - 1) * hop + n;
    let mut padded = vec![0.0; padded_len];
    padded[pad..pad + x.len()].copy_from_slice(x.samples());

    let window = hann_periodic(n);
    let fft = forward_fft(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let frames = (0..num_frames)
        .map(|f| {
            let seg = &padded[f * hop..f * hop + n];
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
                *b = Complex64::new(s * w, 0.0);
            }
            fft.process(&mut buf);
            buf[..cfg.bins()].to_vec()
        })
        .collect();
    Ok(Spectrogram {
        frames,
        frame_length: n,
        hop_length: hop,
        window: "hann-periodic",
        signal_len: x.len(),
    })
}

pub fn istft(s: &Spectrogram, cfg: &EnhanceConfig) -> Result<Waveform> {
    cfg.validate()?;
    if s.frame_length != cfg.frame_length || s.hop_length != cfg.hop_length {
        return Err(Error::domain(format!(
            "spectrogram computed with frame {}/hop {} but config has {}/{}",
            s.frame_length, s.hop_length, cfg.frame_length, cfg.hop_length
        )));
    }
    let n = cfg.frame_length;
    let hop = cfg.hop_length;
    let bins = cfg.bins();
    if s.frames.iter().any(|f| f.len() != bins) {
        return Err(Error::Shape(format!("every frame must hold {bins} bins")));
    }
    let padded_len = (s.num_frames().max(1) - 1) * hop + n;
    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let window = hann_periodic(n);
    let ifft = inverse_fft(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (f, frame) in s.frames.iter().enumerate() {
        buf[..bins].copy_from_slice(frame);
        for k in bins..n {
            buf[k] = frame[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * hop;
        for i in 0..n {
            out[start + i] += window[i] * buf[i].re / n as f64;
            norm[start + i] += window[i] * window[i];
        }
    }
    let pad = cfg.front_pad();
    let samples = (pad..pad + s.signal_len)
        .map(|m| if norm[m] > 1e-12 { out[m] / norm[m] } else { 0.0 })
        .collect();
    Waveform::new(samples, crate::signal::SAMPLE_RATE)
}

/// Per-bin noise power `λ_N(k)` under the configured estimation mode.
pub fn noise_psd(x: &Waveform, sigma: f64, cfg: &EnhanceConfig) -> Result<Vec<f64>> {
    let n = cfg.frame_length;
    match cfg.noise_psd_mode {
        NoisePsdMode::AnalyticSigma => {
            if !(sigma >= 0.0) {
                return Err(Error::domain("sigma must be >= 0"));
            }
            let energy: f64 = hann_periodic(n).iter().map(|w| w * w).sum();
            Ok(vec![sigma * sigma * energy; cfg.bins()])
        }
        NoisePsdMode::LeadingFrames => {
            if x.len() < n {
                return Err(Error::domain("input shorter than one frame"));
            }
            let window = hann_periodic(n);
            let fft = forward_fft(n);
            let count = ((x.len() - n) / cfg.hop_length + 1).min(6);
            let mut psd = vec![0.0; cfg.bins()];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for f in 0..count {
                let seg = &x.samples()[f * cfg.hop_length..f * cfg.hop_length + n];
                for ((b, s), w) in buf.iter_mut().zip(seg).zip(&window) {
                    *b = Complex64::new(s * w, 0.0);
                }
                fft.process(&mut buf);
                for (p, b) in psd.iter_mut().zip(&buf) {
                    *p += b.norm_sqr() / count as f64;
                }
            }
            Ok(psd)
        }
    }
}

/// Decision-directed Wiener gains, one row per STFT frame.
///
/// `ξ(t,k) = α·|Ŝ(t−1,k)|²/λ(k) + (1−α)·max(γ(t,k) − 1, 0)` with
/// `γ = |Y|²/λ`, gain `max(ξ/(1+ξ), floor)` and `Ŝ = gain·Y`.
pub fn wiener_gains(spec: &Spectrogram, noise: &[f64], cfg: &EnhanceConfig) -> Vec<Vec<f64>> {
    let alpha = cfg.dd_alpha;
    let floor = cfg.gain_floor;
    let mut prev_clean = vec![0.0; noise.len()];
    spec.frames
        .iter()
        .map(|frame| {
            frame
                .iter()
                .zip(noise)
                .zip(prev_clean.iter_mut())
                .map(|((y, &lambda), prev)| {
                    let power = y.norm_sqr();
                    let gain = if lambda <= f64::MIN_POSITIVE {
                        1.0
                    } else {
                        let gamma = power / lambda;
                        let xi = alpha * *prev / lambda + (1.0 - alpha) * (gamma - 1.0).max(0.0);
                        (xi / (1.0 + xi)).max(floor).min(1.0)
                    };
                    *prev = gain * gain * power;
                    gain
                })
                .collect()
        })
        .collect()
}

/// ASNR speech enhancement of `x`, assuming additive white noise of deviation `sigma`.
pub fn asnr_enhance(x: &Waveform, sigma: f64, cfg: &EnhanceConfig) -> Result<Waveform> {
    let mut spec = stft(x, cfg)?;
    let noise = noise_psd(x, sigma, cfg)?;
    let gains = wiener_gains(&spec, &noise, cfg);
    for (frame, g) in spec.frames.iter_mut().zip(&gains) {
        for (y, &gain) in frame.iter_mut().zip(g) {
            *y *= gain;
        }
    }
    istft(&spec, cfg)
}
