//! WER-threshold certification of the smoothed recognizer.
//!
//! The transcript output is reduced to a binary event, "WER against the top
//! transcript is below k", whose probability under Gaussian noise is lower
//! bounded with an exact one-sided binomial bound. A lower bound above one
//! half yields an L2 radius `σ·Φ⁻¹(p)` within which the event stays more
//! likely than not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognizer::{greedy_decode, ModelParams};
use crate::signal::{add_gaussian_noise, Perturbation, RngStream, Waveform};
use crate::smoothing::{smoothed_transcribe, SmoothingConfig, VoteStrategy, MAX_SAMPLES};
use crate::voting::{wer, RoverConfig, Transcript};

/// Standard normal CDF.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`gaussian_cdf`].
///
/// Acklam's rational approximation (relative error about 1e-9), polished by
/// Newton steps on the erfc-based CDF.
pub fn gaussian_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile needs p in (0, 1), got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let mut x = if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..3 {
        let pdf = gaussian_pdf(x);
        if pdf <= 0.0 {
            break;
        }
        // Φ(x) − p, evaluated in the smaller tail to keep its precision.
        let err = if x > 0.0 {
            (1.0 - p) - gaussian_cdf(-x)
        } else {
            gaussian_cdf(x) - p
        };
        x -= err / pdf;
    }
    Ok(x)
}

/// Outcome of the radius computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "radius")]
pub enum Radius {
    Certified(f64),
    Abstain,
}

impl Radius {
    pub fn value(self) -> f64 {
        match self {
            Radius::Certified(r) => r,
            Radius::Abstain => 0.0,
        }
    }
}

/// `σ·Φ⁻¹(p)`, or [`Radius::Abstain`] when `p ≤ 1/2`.
pub fn radius(sigma: f64, p: f64) -> Result<Radius> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(p <= 1.0) {
        return Err(Error::domain(format!("probability must be <= 1, got {p}")));
    }
    if p <= 0.5 {
        return Ok(Radius::Abstain);
    }
    if p == 1.0 {
        return Err(Error::domain("radius is unbounded at p = 1"));
    }
    Ok(Radius::Certified(sigma * gaussian_quantile(p)?))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction of the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// One-sided Clopper-Pearson lower bound on a binomial success probability
/// at confidence `1 − alpha`: the `alpha` quantile of `Beta(s, n − s + 1)`.
pub fn clopper_pearson_lower(successes: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 || successes > n {
        return Err(Error::domain(format!("need 0 <= successes <= n, n >= 1; got {successes}/{n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    if successes == n {
        return Ok(alpha.powf(1.0 / n as f64));
    }
    let (a, b) = (successes as f64, (n - successes + 1) as f64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if regularized_incomplete_beta(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// True when the base recognizer's transcript of `x_noisy` is within WER `k`
/// of `reference` (strictly below). An empty reference only matches an
/// empty transcript.
pub fn binary_indicator(params: &ModelParams, x_noisy: &Waveform, reference: &Transcript, k: f64) -> Result<bool> {
    let decoded = greedy_decode(&params.forward(x_noisy)?, &params.vocabulary).transcript;
    if reference.is_empty() {
        return Ok(decoded.is_empty());
    }
    Ok(wer(&decoded, reference)? < k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertConfig {
    pub sigma: f64,
    /// WER threshold of the certified event.
    pub k: f64,
    /// Draws used to pick the top transcript.
    pub n0: usize,
    /// Draws used to bound its probability.
    pub n: usize,
    pub alpha: f64,
    pub rover: RoverConfig,
    pub seed: u64,
}

impl Default for CertConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            k: 0.3,
            n0: 32,
            n: 1000,
            alpha: 0.05,
            rover: RoverConfig::default(),
            seed: 0,
        }
    }
}

impl CertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::domain("sigma must be >= 0"));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::domain(format!("k must lie in (0, 1), got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n0 == 0 || self.n == 0 {
            return Err(Error::domain("sample counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertResult {
    pub top_transcript: Transcript,
    pub successes: u64,
    pub n: u64,
    pub p_lower: f64,
    pub radius: Radius,
}

impl CertResult {
    pub fn abstained(&self) -> bool {
        self.radius == Radius::Abstain
    }
}

/// Certify `x`: pick the top transcript with a ROVER vote over
/// `min(n0, 50)` draws, then bound `P[WER(f(x+ε), t_A) < k]` from `n` fresh
/// draws.
///
/// Abstains when the bound is at most 1/2, and also when `σ = 0`, where the
/// radius is zero.
pub fn certify(params: &ModelParams, x: &Waveform, cfg: &CertConfig, stream: &RngStream) -> Result<CertResult> {
    cfg.validate()?;
    let selection = SmoothingConfig {
        sigma: cfg.sigma,
        n_samples: cfg.n0.min(MAX_SAMPLES),
        enhance: false,
        vote: VoteStrategy::Rover,
        rover: cfg.rover.clone(),
        seed: cfg.seed,
        ..SmoothingConfig::default()
    };
    let top = smoothed_transcribe(params, x, &selection, &stream.derive(0))?.transcript;
    let estimation = stream.derive(1);
    let mut successes = 0u64;
    for i in 0..cfg.n {
        let noisy = add_gaussian_noise(x, cfg.sigma, &estimation.derive(i as u64))?;
        if binary_indicator(params, &noisy, &top, cfg.k)? {
            successes += 1;
        }
    }
    let n = cfg.n as u64;
    let p_lower = clopper_pearson_lower(successes, n, cfg.alpha)?;
    let radius = if cfg.sigma == 0.0 || p_lower <= 0.5 {
        Radius::Abstain
    } else {
        radius(cfg.sigma, p_lower)?
    };
    Ok(CertResult {
        top_transcript: top,
        successes,
        n,
        p_lower,
        radius,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Perturbations sampled from the ball.
    pub trials: usize,
    /// Noise draws per perturbation.
    pub noise_draws: usize,
    /// Multiplier on the certified radius (1 for the real check).
    pub radius_scale: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            noise_draws: 50,
            radius_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub radius: f64,
    /// Estimated `P[WER < k]` for each sampled perturbation.
    pub estimates: Vec<f64>,
    pub passed: usize,
}

impl ValidationReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.estimates.is_empty() {
            return 1.0;
        }
        self.passed as f64 / self.estimates.len() as f64
    }
}

/// Perturbation drawn uniformly from the L2 ball of radius `r`.
pub fn sample_in_ball(len: usize, r: f64, stream: &RngStream) -> Perturbation {
    use rand::Rng;
    let dir = stream.derive(0).gaussian(len, 1.0);
    let norm = crate::signal::l2_norm(&dir);
    let u: f64 = stream.derive(1).rng().random();
    let scale = if norm > 0.0 { r * u.powf(1.0 / len as f64) / norm } else { 0.0 };
    Perturbation::new(dir.into_iter().map(|d| d * scale).collect())
}

/// Monte Carlo check of a certificate: for perturbations inside the (scaled)
/// ball, the certified event should still hold with probability above 1/2.
pub fn validate_certificate(
    params: &ModelParams,
    x: &Waveform,
    cert: &CertResult,
    cfg: &CertConfig,
    vcfg: &ValidationConfig,
    stream: &RngStream,
) -> Result<ValidationReport> {
    let Radius::Certified(r) = cert.radius else {
        return Err(Error::domain("cannot validate an abstained certificate"));
    };
    if vcfg.noise_draws == 0 || !(vcfg.radius_scale >= 0.0) {
        return Err(Error::domain("validation needs noise draws and a non-negative scale"));
    }
    let r = r * vcfg.radius_scale;
    let mut estimates = Vec::with_capacity(vcfg.trials);
    for t in 0..vcfg.trials {
        let trial = stream.derive(t as u64);
        let shifted = x.perturbed(&sample_in_ball(x.len(), r, &trial.derive(0)))?;
        let noise = trial.derive(1);
        let mut hits = 0usize;
        for j in 0..vcfg.noise_draws {
            let noisy = add_gaussian_noise(&shifted, cfg.sigma, &noise.derive(j as u64))?;
            if binary_indicator(params, &noisy, &cert.top_transcript, cfg.k)? {
                hits += 1;
            }
        }
        estimates.push(hits as f64 / vcfg.noise_draws as f64);
    }
    let passed = estimates.iter().filter(|&&e| e > 0.5).count();
    Ok(ValidationReport {
        radius: r,
        estimates,
        passed,
    })
}
