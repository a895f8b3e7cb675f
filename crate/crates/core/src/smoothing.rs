//! The smoothed recognizer: transcribe N Gaussian-noisy (optionally
//! enhanced) copies of the input and combine them with a voting strategy.

use serde::{Deserialize, Serialize};

use crate::enhance::{asnr_enhance, EnhanceConfig};
use crate::error::{Error, Result};
use crate::recognizer::{greedy_decode, DecodeResult, LogitsSequence, ModelParams};
use crate::signal::{add_gaussian_noise, RngStream, Waveform};
use crate::voting::{average_logits, majority_vote, rover, RoverConfig, Transcript};

pub const MAX_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteStrategy {
    /// Transcript of the first noisy sample.
    OneSentence,
    Majority,
    LogitAvg,
    Rover,
}

impl VoteStrategy {
    pub fn name(self) -> &'static str {
        match self {
            VoteStrategy::OneSentence => "one-sentence",
            VoteStrategy::Majority => "majority",
            VoteStrategy::LogitAvg => "logit-avg",
            VoteStrategy::Rover => "rover",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub enhance: bool,
    pub enhance_config: EnhanceConfig,
    pub vote: VoteStrategy,
    pub rover: RoverConfig,
    pub seed: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            n_samples: 16,
            enhance: false,
            enhance_config: EnhanceConfig::default(),
            vote: VoteStrategy::Rover,
            rover: RoverConfig::default(),
            seed: 0,
        }
    }
}

impl SmoothingConfig {
    /// Plain base recognizer: no noise, one sample, no enhancement.
    pub fn undefended() -> Self {
        Self {
            sigma: 0.0,
            n_samples: 1,
            enhance: false,
            vote: VoteStrategy::OneSentence,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::domain(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(1..=MAX_SAMPLES).contains(&self.n_samples) {
            return Err(Error::domain(format!(
                "n_samples must lie in 1..={MAX_SAMPLES}, got {}",
                self.n_samples
            )));
        }
        if self.enhance {
            self.enhance_config.validate()?;
        }
        Ok(())
    }

    /// True when repeated transcriptions of the same input can differ.
    pub fn is_stochastic(&self) -> bool {
        self.sigma > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct SmoothedOutput {
    pub transcript: Transcript,
    /// Per-sample decodes in sample order; failed samples are absent.
    pub samples: Vec<DecodeResult>,
    pub logits: Vec<LogitsSequence>,
}

/// Noisy copy number `index`, enhanced if configured. The noise depends only
/// on `(stream, index)`, never on `enhance`.
pub fn noisy_sample(x: &Waveform, cfg: &SmoothingConfig, stream: &RngStream, index: usize) -> Result<Waveform> {
    let noisy = add_gaussian_noise(x, cfg.sigma, &stream.derive(index as u64))?;
    if cfg.enhance {
        asnr_enhance(&noisy, cfg.sigma, &cfg.enhance_config)
    } else {
        Ok(noisy)
    }
}

/// Combine per-sample results with `vote`.
pub fn combine(
    vote: VoteStrategy,
    samples: &[DecodeResult],
    logits: &[LogitsSequence],
    params: &ModelParams,
    rover_cfg: &RoverConfig,
) -> Result<Transcript> {
    let first = samples
        .first()
        .ok_or_else(|| Error::domain("no successful samples to vote over"))?;
    match vote {
        VoteStrategy::OneSentence => Ok(first.transcript.clone()),
        VoteStrategy::Majority => {
            let ts: Vec<Transcript> = samples.iter().map(|s| s.transcript.clone()).collect();
            majority_vote(&ts)
        }
        VoteStrategy::LogitAvg => average_logits(logits, &params.vocabulary),
        VoteStrategy::Rover => {
            let hyps: Vec<_> = samples.iter().map(|s| s.word_hyps.clone()).collect();
            rover(&hyps, rover_cfg)
        }
    }
}

/// Smoothed transcription of `x`. Sample `i` draws its noise from
/// `stream.derive(i)`, so smaller `n_samples` reuse a prefix of the draws.
pub fn smoothed_transcribe(
    params: &ModelParams,
    x: &Waveform,
    cfg: &SmoothingConfig,
    stream: &RngStream,
) -> Result<SmoothedOutput> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut logits = Vec::with_capacity(cfg.n_samples);
    let mut last_err = None;
    // One-sentence estimation only ever looks at the first sample.
    let n = if cfg.vote == VoteStrategy::OneSentence { 1 } else { cfg.n_samples };
    for i in 0..n {
        match noisy_sample(x, cfg, stream, i).and_then(|w| params.forward(&w)) {
            Ok(l) => {
                samples.push(greedy_decode(&l, &params.vocabulary));
                logits.push(l);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if samples.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::domain("no samples drawn")));
    }
    let transcript = combine(cfg.vote, &samples, &logits, params, &cfg.rover)?;
    Ok(SmoothedOutput {
        transcript,
        samples,
        logits,
    })
}
