//! Waveforms, perturbations, SNR arithmetic and seeded Gaussian noise.
//!
//! Samples are kept as `f64` everywhere; quantization to 16-bit PCM happens
//! only in [`write_wav`], which is also the only place that clips to `[-1, 1]`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("waveform must be non-empty"));
        }
        if sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Waveform at the artifact's fixed 16 kHz rate.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.samples)
    }

    /// `self + delta`, unclipped.
    pub fn perturbed(&self, delta: &Perturbation) -> Result<Waveform> {
        if delta.len() != self.len() {
            return Err(Error::Shape(format!(
                "perturbation of length {} applied to waveform of length {}",
                delta.len(),
                self.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(delta.as_slice())
            .map(|(x, d)| x + d)
            .collect();
        Waveform::new(samples, self.sample_rate)
    }
}

/// Additive perturbation δ; always the same length as the waveform it targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    delta: Vec<f64>,
}

impl Perturbation {
    pub fn new(delta: Vec<f64>) -> Self {
        Self { delta }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            delta: vec![0.0; len],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.delta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.delta)
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the 64-bit stream selector, so two streams with the
/// same seed and different ids never overlap. Normal draws use the Ziggurat
/// sampler from `rand_distr`, which only consumes the underlying `u64`s and is
/// therefore identical across platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for sub-task `tag`. Distinct tags give distinct streams.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    pub fn gaussian(&self, len: usize, sigma: f64) -> Vec<f64> {
        let mut rng = self.rng();
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Signal-to-noise ratio `20·log10(‖x‖₂/‖δ‖₂)` in dB.
///
/// A zero perturbation yields `f64::INFINITY`; a zero signal is a domain error.
pub fn snr_db(x: &Waveform, delta: &Perturbation) -> Result<f64> {
    if delta.len() != x.len() {
        return Err(Error::Shape(format!(
            "perturbation length {} != waveform length {}",
            delta.len(),
            x.len()
        )));
    }
    let xn = x.l2_norm();
    if xn == 0.0 {
        return Err(Error::domain("SNR undefined for a zero-norm signal"));
    }
    let dn = delta.l2_norm();
    if dn == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (xn / dn).log10())
}

/// `‖x‖₂ / 10^(snr/20)`: the perturbation norm that sits exactly at `snr_db`.
pub fn linf_bound_from_snr(x: &Waveform, snr_db: f64) -> f64 {
    x.l2_norm() / 10f64.powf(snr_db / 20.0)
}

/// Per-sample box radius whose corners sit exactly at `snr_db`.
///
/// Any δ with `‖δ‖∞ ≤ r` has `‖δ‖₂ ≤ r·√n = linf_bound_from_snr(x, snr_db)`,
/// so box-constrained attacks never drop below the SNR bound.
pub fn per_sample_linf_bound(x: &Waveform, snr_db: f64) -> f64 {
    linf_bound_from_snr(x, snr_db) / (x.len() as f64).sqrt()
}

pub fn add_gaussian_noise(x: &Waveform, sigma: f64, rng: &RngStream) -> Result<Waveform> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("noise deviation must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noise = rng.gaussian(x.len(), sigma);
    let samples = x.samples.iter().zip(noise).map(|(s, n)| s + n).collect();
    Waveform::new(samples, x.sample_rate)
}

pub fn project_linf(delta: &Perturbation, epsilon: f64) -> Perturbation {
    let eps = epsilon.max(0.0);
    Perturbation::new(delta.delta.iter().map(|d| d.clamp(-eps, eps)).collect())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| Error::Format {
        field: "header",
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format {
            field: "channels",
            detail: format!("expected 1, found {}", spec.channels),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format {
            field: "sample_rate",
            detail: format!("expected {SAMPLE_RATE}, found {}", spec.sample_rate),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format {
            field: "bits_per_sample",
            detail: format!(
                "expected 16-bit PCM, found {} bits ({:?})",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| v as f64 / 32768.0).map_err(|e| Error::Format {
                field: "data",
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Waveform::new(samples, SAMPLE_RATE)
}

pub fn write_wav(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if x.sample_rate != SAMPLE_RATE {
        return Err(Error::Format {
            field: "sample_rate",
            detail: format!("only {SAMPLE_RATE} Hz is supported, got {}", x.sample_rate),
        });
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            field: "data",
            detail: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &x.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav(v: &[f64]) -> Waveform {
        Waveform::from_samples(v.to_vec()).unwrap()
    }

    #[test]
    fn snr_examples() {
        let x = wav(&[0.3, -0.2, 0.7, 0.1]);
        let scaled = Perturbation::new(x.samples().iter().map(|s| 0.1 * s).collect());
        assert!((snr_db(&x, &scaled).unwrap() - 20.0).abs() < 1e-12);
        let same = Perturbation::new(x.samples().to_vec());
        assert!(snr_db(&x, &same).unwrap().abs() < 1e-12);

        let x = wav(&[0.5, 0.5]);
        let d = Perturbation::new(vec![0.05, -0.05]);
        // ‖x‖ = 0.5√2, ‖δ‖ = 0.05√2
        assert!((snr_db(&x, &d).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn snr_edge_cases() {
        let x = wav(&[0.5, 0.5]);
        assert_eq!(snr_db(&x, &Perturbation::zeros(2)).unwrap(), f64::INFINITY);
        let zero = wav(&[0.0, 0.0]);
        assert!(matches!(
            snr_db(&zero, &Perturbation::new(vec![0.1, 0.1])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            snr_db(&x, &Perturbation::zeros(3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linf_bound_examples() {
        // ‖x‖₂ = 100 with a single sample.
        let x = wav(&[100.0]);
        assert!((linf_bound_from_snr(&x, 20.0) - 10.0).abs() < 1e-12);
        assert!((linf_bound_from_snr(&x, 0.0) - 100.0).abs() < 1e-12);
        let x = wav(&[31.62]);
        assert!((linf_bound_from_snr(&x, 30.0) - 31.62 / 10f64.powf(1.5)).abs() < 1e-12);
        assert!((linf_bound_from_snr(&x, 30.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn per_sample_bound_keeps_snr() {
        let x = wav(&[0.1, -0.4, 0.25, 0.05, 0.3]);
        let r = per_sample_linf_bound(&x, 25.0);
        let corner = Perturbation::new(vec![r, -r, r, -r, r]);
        assert!((snr_db(&x, &corner).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = wav(&[0.1, 0.2, -0.3]);
        let y = add_gaussian_noise(&x, 0.0, &RngStream::new(1, 0)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = wav(&[0.1]);
        assert!(add_gaussian_noise(&x, -0.1, &RngStream::new(1, 0)).is_err());
        assert!(add_gaussian_noise(&x, f64::NAN, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn noise_is_reproducible() {
        let x = wav(&vec![0.05; 1000]);
        let a = add_gaussian_noise(&x, 0.01, &RngStream::new(42, 3)).unwrap();
        let b = add_gaussian_noise(&x, 0.01, &RngStream::new(42, 3)).unwrap();
        let c = add_gaussian_noise(&x, 0.01, &RngStream::new(42, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn injected_noise_snr_matches_sigma() {
        let n = 16_000;
        let x = wav(
            &(0..n)
                .map(|i| 0.1 * (i as f64 * 0.0628).sin())
                .collect::<Vec<_>>(),
        );
        let sigma = 0.02;
        let expected = 20.0 * (x.l2_norm() / (sigma * (n as f64).sqrt())).log10();
        for seed in 0..100 {
            let y = add_gaussian_noise(&x, sigma, &RngStream::new(seed, 0)).unwrap();
            let delta = Perturbation::new(
                y.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect(),
            );
            let got = snr_db(&x, &delta).unwrap();
            assert!((got - expected).abs() < 1.0, "seed {seed}: {got} vs {expected}");
        }
    }

    #[test]
    fn projection_examples() {
        let p = project_linf(&Perturbation::new(vec![0.5, -0.5]), 0.1);
        assert_eq!(p.as_slice(), &[0.1, -0.1]);
        let inside = Perturbation::new(vec![0.05, -0.02]);
        assert_eq!(project_linf(&inside, 0.1), inside);
        let p = project_linf(&Perturbation::new(vec![0.2, 0.05, -0.3]), 0.1);
        assert_eq!(p.as_slice(), &[0.1, 0.05, -0.1]);
    }

    #[test]
    fn derived_streams_differ() {
        let base = RngStream::new(7, 0);
        assert_ne!(base.derive(1), base.derive(2));
        assert_eq!(base.derive(1), base.derive(1));
        assert_ne!(base.derive(1).gaussian(4, 1.0), base.derive(2).gaussian(4, 1.0));
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..1600).map(|i| 0.9 * (i as f64 * 0.01).sin()).collect();
        let x = wav(&samples);
        write_wav(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn wav_rejects_wrong_format() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&stereo),
            Err(Error::Format { field: "channels", .. })
        ));

        let rate = dir.path().join("rate.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&rate, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&rate),
            Err(Error::Format { field: "sample_rate", .. })
        ));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFFxxxxWAVEjunkjunk").unwrap();
        assert!(matches!(
            read_wav(&junk),
            Err(Error::Format { field: "header", .. })
        ));
    }

    proptest! {
        #[test]
        fn snr_scale_law(
            xs in proptest::collection::vec(-1.0f64..1.0, 1..64),
            c in 1e-3f64..1e3,
        ) {
            let x = wav(&xs);
            prop_assume!(x.l2_norm() > 1e-6);
            let d = Perturbation::new(xs.iter().map(|v| c * v).collect());
            let got = snr_db(&x, &d).unwrap();
            prop_assert!((got + 20.0 * c.log10()).abs() < 1e-9);
        }

        #[test]
        fn projection_idempotent_and_shrinking(
            ds in proptest::collection::vec(-2.0f64..2.0, 0..64),
            eps in 0.0f64..1.5,
        ) {
            let d = Perturbation::new(ds);
            let p = project_linf(&d, eps);
            prop_assert_eq!(project_linf(&p, eps), p.clone());
            for (a, b) in d.as_slice().iter().zip(p.as_slice()) {
                prop_assert!(b.abs() <= a.abs());
                prop_assert!(b.abs() <= eps);
            }
        }
    }
}
