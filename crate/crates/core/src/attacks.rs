//! White-box attacks on the base and smoothed recognizers: SNR-bounded
//! untargeted PGD and unbounded targeted CW, with gradients averaged over
//! noise draws (EoT) and an optional straight-through pass across
//! enhancement.
//!
//! The vote is not differentiable. Attacks therefore optimise the CTC loss
//! averaged over noisy samples, and only the evaluation runs the full
//! defended pipeline.

use serde::{Deserialize, Serialize};

use crate::enhance::asnr_enhance;
use crate::error::{Error, Result};
use crate::recognizer::ModelParams;
use crate::signal::{add_gaussian_noise, per_sample_linf_bound, project_linf, snr_db, Perturbation, RngStream, Waveform};
use crate::smoothing::{smoothed_transcribe, SmoothingConfig};
use crate::voting::{wer, Transcript};

/// How the attacker's gradient treats the enhancement stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnhanceBackward {
    /// The surrogate leaves enhancement out entirely.
    Skip,
    /// Enhancement runs forward; its Jacobian is taken as the identity.
    StraightThrough,
}

/// A recognizer as seen by the attacker.
#[derive(Debug, Clone)]
pub struct Defense<'a> {
    pub params: &'a ModelParams,
    pub smoothing: SmoothingConfig,
    pub backward: EnhanceBackward,
}

/// Loss and its gradient with respect to the input waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl<'a> Defense<'a> {
    pub fn new(params: &'a ModelParams, smoothing: SmoothingConfig) -> Self {
        Self {
            params,
            smoothing,
            backward: EnhanceBackward::Skip,
        }
    }

    pub fn undefended(params: &'a ModelParams) -> Self {
        Self::new(params, SmoothingConfig::undefended())
    }

    pub fn is_stochastic(&self) -> bool {
        self.smoothing.is_stochastic()
    }

    /// What the defender outputs for `x`.
    pub fn transcribe(&self, x: &Waveform, stream: &RngStream) -> Result<Transcript> {
        Ok(smoothed_transcribe(self.params, x, &self.smoothing, stream)?.transcript)
    }

    /// Loss and input gradient at one already-noised copy.
    pub fn loss_gradient_at(&self, noisy: &Waveform, target: &Transcript) -> Result<(f64, Vec<f64>)> {
        let point = if self.smoothing.enhance && self.backward == EnhanceBackward::StraightThrough {
            asnr_enhance(noisy, self.smoothing.sigma, &self.smoothing.enhance_config)?
        } else {
            noisy.clone()
        };
        self.params.loss_and_input_grad(point.samples(), target)
    }

    /// Mean CTC loss of `target` and its gradient over `n` noise draws.
    /// Deterministic defenses use a single draw, which is exact.
    pub fn eot_gradient(&self, x: &Waveform, target: &Transcript, n: usize, stream: &RngStream) -> Result<LossGradient> {
        let n = if self.is_stochastic() { n } else { n.min(1) };
        eot_mean(x, self.smoothing.sigma, n, stream, |noisy| self.loss_gradient_at(noisy, target))
    }
}

/// Wrap a defense so the attacker differentiates through enhancement as the
/// identity. A no-op for defenses without enhancement.
pub fn straight_through(defense: Defense<'_>) -> Defense<'_> {
    Defense {
        backward: EnhanceBackward::StraightThrough,
        ..defense
    }
}

/// Average of `f` over `n` copies of `x` with N(0, σ²) noise, copy `i`
/// drawing from `stream.derive(i)`.
pub fn eot_mean<F>(x: &Waveform, sigma: f64, n: usize, stream: &RngStream, mut f: F) -> Result<LossGradient>
where
    F: FnMut(&Waveform) -> Result<(f64, Vec<f64>)>,
{
    if n == 0 {
        return Err(Error::domain("EoT needs at least one sample"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..n {
        let noisy = add_gaussian_noise(x, sigma, &stream.derive(i as u64))?;
        let (l, g) = f(&noisy)?;
        if g.len() != grad.len() {
            return Err(Error::Shape(format!("gradient of length {} for input of length {}", g.len(), grad.len())));
        }
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(LossGradient { loss: loss * inv, grad })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub snr_bound_db: f64,
    pub steps: usize,
    /// Sign-step size; `None` uses a tenth of the per-sample bound.
    pub step_size: Option<f64>,
    pub eot_samples: usize,
    /// Differentiate through enhancement with the straight-through estimator.
    pub adaptive: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            snr_bound_db: 25.0,
            steps: 50,
            step_size: None,
            eot_samples: 16,
            adaptive: true,
        }
    }
}

impl PgdConfig {
    /// Single-draw gradients, enhancement left out of the surrogate.
    pub fn vanilla(snr_bound_db: f64) -> Self {
        Self {
            snr_bound_db,
            eot_samples: 1,
            adaptive: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eot_samples == 0 {
            return Err(Error::domain("eot_samples must be >= 1"));
        }
        if !self.snr_bound_db.is_finite() {
            return Err(Error::domain("SNR bound must be finite"));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::domain("step size must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub delta: Perturbation,
    pub achieved_snr_db: f64,
    pub success: bool,
    /// WER of the defended output against the ground truth.
    pub wer_ground_truth: f64,
    /// WER of the defended output against the attack target (CW only).
    pub wer_target: Option<f64>,
    pub steps_used: usize,
    /// Surrogate loss before each step.
    pub loss_trace: Vec<f64>,
    /// Set when a gradient could not be computed; `delta` is then the last
    /// iterate reached.
    pub gradient_failed: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Untargeted L∞ PGD: sign-gradient ascent on the CTC loss of `truth`,
/// projected after every step onto the per-sample box whose corners sit at
/// the SNR bound.
///
/// Step `s` draws its EoT noise from `stream.derive(0).derive(s)`; the final
/// evaluation uses `stream.derive(1)`, which the attacker never sees.
pub fn pgd_attack(
    defense: &Defense<'_>,
    x: &Waveform,
    truth: &Transcript,
    cfg: &PgdConfig,
    stream: &RngStream,
) -> Result<AttackResult> {
    cfg.validate()?;
    let surrogate = if cfg.adaptive {
        straight_through(defense.clone())
    } else {
        Defense {
            backward: EnhanceBackward::Skip,
            ..defense.clone()
        }
    };
    let eps = per_sample_linf_bound(x, cfg.snr_bound_db);
    let step = cfg.step_size.unwrap_or(eps / 10.0);
    let attack_stream = stream.derive(0);
    let mut delta = Perturbation::zeros(x.len());
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut gradient_failed = false;
    let mut steps_used = 0;
    for s in 0..cfg.steps {
        let point = x.perturbed(&delta)?;
        let lg = match surrogate.eot_gradient(&point, truth, cfg.eot_samples, &attack_stream.derive(s as u64)) {
            Ok(lg) => lg,
            Err(_) => {
                gradient_failed = true;
                break;
            }
        };
        loss_trace.push(lg.loss);
        for (d, g) in delta.as_mut_slice().iter_mut().zip(&lg.grad) {
            *d += step * sign(*g);
        }
        delta = project_linf(&delta, eps);
        steps_used = s + 1;
    }
    let adv = x.perturbed(&delta)?;
    let output = defense.transcribe(&adv, &stream.derive(1))?;
    Ok(AttackResult {
        achieved_snr_db: snr_db(x, &delta)?,
        success: output != *truth,
        wer_ground_truth: wer(&output, truth)?,
        wer_target: None,
        steps_used,
        loss_trace,
        gradient_failed,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CwConfig {
    pub target: Transcript,
    pub lambda_init: f64,
    /// Steps between success checks (and λ updates).
    pub lambda_update_every: usize,
    /// λ is multiplied by this after a successful check and divided by it
    /// after a failed one.
    pub lambda_factor: f64,
    pub max_steps: usize,
    /// Adam learning rate on δ.
    pub step_size: f64,
    pub eot_samples: usize,
    pub adaptive: bool,
    /// Largest WER against the target that counts as success.
    pub success_wer: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            target: Transcript::empty(),
            lambda_init: 0.05,
            lambda_update_every: 50,
            lambda_factor: 2.0,
            max_steps: 1000,
            step_size: 2e-4,
            eot_samples: 16,
            adaptive: true,
            success_wer: 0.1,
        }
    }
}

impl CwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0) {
            return Err(Error::domain("lambda_init must be positive"));
        }
        if !(self.lambda_factor > 1.0) {
            return Err(Error::domain("lambda_factor must exceed 1"));
        }
        if self.lambda_update_every == 0 || self.eot_samples == 0 {
            return Err(Error::domain("lambda_update_every and eot_samples must be >= 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::domain("step size must be positive"));
        }
        if self.target.is_empty() {
            return Err(Error::domain("CW needs a non-empty target"));
        }
        Ok(())
    }
}

/// One λ adjustment made by [`cw_attack`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaUpdate {
    pub step: usize,
    pub success: bool,
    pub lambda: f64,
}

/// Targeted CW: Adam on `mean CTC(target) + λ‖δ‖₂`, unbounded.
///
/// Every `lambda_update_every` steps (starting at step 0) the defended
/// pipeline transcribes `x + δ`. Success raises λ to shrink δ, failure
/// lowers it. The result keeps the successful δ with the highest SNR, or the
/// last iterate if none succeeded.
pub fn cw_attack(
    defense: &Defense<'_>,
    x: &Waveform,
    truth: &Transcript,
    cfg: &CwConfig,
    stream: &RngStream,
) -> Result<(AttackResult, Vec<LambdaUpdate>)> {
    cfg.validate()?;
    let surrogate = if cfg.adaptive {
        straight_through(defense.clone())
    } else {
        Defense {
            backward: EnhanceBackward::Skip,
            ..defense.clone()
        }
    };
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    let n = x.len();
    let attack_stream = stream.derive(0);
    let eval_stream = stream.derive(1);
    let mut delta = Perturbation::zeros(n);
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut lambda = cfg.lambda_init;
    let mut schedule = Vec::new();
    let mut best: Option<(Perturbation, f64)> = None;
    let mut loss_trace = Vec::new();
    let mut gradient_failed = false;
    let mut steps_used = 0;
    for s in 0..=cfg.max_steps {
        if s % cfg.lambda_update_every == 0 || s == cfg.max_steps {
            let out = defense.transcribe(&x.perturbed(&delta)?, &eval_stream)?;
            let success = wer(&out, &cfg.target)? <= cfg.success_wer;
            if success {
                let snr = snr_db(x, &delta)?;
                if best.as_ref().is_none_or(|(_, b)| snr > *b) {
                    best = Some((delta.clone(), snr));
                }
                lambda *= cfg.lambda_factor;
            } else {
                lambda /= cfg.lambda_factor;
            }
            schedule.push(LambdaUpdate { step: s, success, lambda });
            if success && delta.l2_norm() == 0.0 {
                break;
            }
        }
        if s == cfg.max_steps {
            break;
        }
        let point = x.perturbed(&delta)?;
        let lg = match surrogate.eot_gradient(&point, &cfg.target, cfg.eot_samples, &attack_stream.derive(s as u64)) {
            Ok(lg) => lg,
            Err(_) => {
                gradient_failed = true;
                break;
            }
        };
        let norm = delta.l2_norm();
        loss_trace.push(lg.loss + lambda * norm);
        let t = (s + 1) as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, d) in delta.as_mut_slice().iter_mut().enumerate() {
            let g = lg.grad[i] + if norm > 0.0 { lambda * *d / norm } else { 0.0 };
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            *d -= cfg.step_size * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-12);
        }
        steps_used = s + 1;
    }
    let success = best.is_some();
    let delta = best.map(|b| b.0).unwrap_or(delta);
    let out = defense.transcribe(&x.perturbed(&delta)?, &eval_stream)?;
    Ok((
        AttackResult {
            achieved_snr_db: snr_db(x, &delta)?,
            success,
            wer_ground_truth: wer(&out, truth)?,
            wer_target: Some(wer(&out, &cfg.target)?),
            steps_used,
            loss_trace,
            gradient_failed,
            delta,
        },
        schedule,
    ))
}

/// Fixed CW targets of two, four and six words.
pub const CW_TARGETS: [&str; 3] = ["go left", "stop turn up no", "yes run down on go left"];

/// The fixed target closest in length to `truth` that differs from it.
pub fn cw_target_for(truth: &Transcript) -> Transcript {
    let mut targets: Vec<Transcript> = CW_TARGETS
        .iter()
        .map(|t| t.parse().expect("fixed targets are valid transcripts"))
        .collect();
    targets.sort_by_key(|t: &Transcript| (t.len().abs_diff(truth.len()), t.len()));
    targets
        .into_iter()
        .find(|t| t != truth)
        .expect("the fixed targets are distinct")
}
