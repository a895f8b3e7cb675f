//! Result rows and the files a run writes: CSV tables, gnuplot curves and
//! the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// One table row. WERs are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub defense: String,
    pub attack: String,
    pub utterances: usize,
    pub wer_ground_truth: f64,
    pub wer_target: Option<f64>,
    pub snr_db: Option<f64>,
    pub success: Option<bool>,
    pub wall_time_s: f64,
}

/// ROVER cost and accuracy at one sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n_samples: usize,
    /// Mean wall time of one vote, in seconds.
    pub vote_time_s: f64,
    pub wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertRow {
    pub utterance: String,
    pub sigma: f64,
    pub k: f64,
    pub n: u64,
    pub successes: u64,
    pub p_lower: f64,
    pub radius: f64,
    pub abstained: bool,
    pub top_transcript: String,
    /// Fraction of in-ball perturbations that kept the event above 1/2.
    pub pass_fraction: Option<f64>,
    /// Same, with the radius inflated by the control scale.
    pub control_pass_fraction: Option<f64>,
}

/// A PGD curve: WER against SNR bound for one defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub defense: String,
    pub points: Vec<(f64, f64)>,
}

/// Mean of per-utterance WERs (fractions), as a capped percentage.
pub fn mean_percent(wers: &[f64]) -> f64 {
    if wers.is_empty() {
        return 0.0;
    }
    (100.0 * wers.iter().sum::<f64>() / wers.len() as f64).min(100.0)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Two whitespace-separated columns, one point per line.
pub fn gnuplot_data(curve: &Curve) -> String {
    let mut s = format!("# {}\n# snr_bound_db wer_percent\n", curve.defense);
    for (x, y) in &curve.points {
        let _ = writeln!(s, "{x} {y}");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the effective config, serialized as JSON.
    pub config_sha256: String,
    pub seed: u64,
    pub corpus_seed: u64,
    pub corpus_dir: Option<PathBuf>,
    /// SHA-256 of each model file used, keyed by role.
    pub models: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub versions: BTreeMap<String, String>,
}

impl Manifest {
    pub fn versions() -> BTreeMap<String, String> {
        BTreeMap::from([
            ("asr-smooth".to_owned(), asr_smooth::VERSION.to_owned()),
            ("asr-smooth-harness".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
            (
                "model-format".to_owned(),
                asr_smooth::recognizer::MODEL_FORMAT_VERSION.to_string(),
            ),
        ])
    }
}
