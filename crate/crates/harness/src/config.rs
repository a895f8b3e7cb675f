//! Experiment configuration, read from a JSON file. Every field has a
//! default, so `{}` is a valid config.

use std::path::{Path, PathBuf};

use asr_smooth::attacks::{CwConfig, PgdConfig, CW_TARGETS};
use asr_smooth::certify::{CertConfig, ValidationConfig};
use asr_smooth::enhance::EnhanceConfig;
use asr_smooth::recognizer::{CorpusConfig, TrainConfig};
use asr_smooth::smoothing::{SmoothingConfig, VoteStrategy, MAX_SAMPLES};
use asr_smooth::voting::{RoverConfig, Transcript};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Named defense configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Baseline model, no noise.
    Undefended,
    /// Augmented model, Gaussian smoothing, ROVER vote.
    Trained,
    /// Baseline model, Gaussian smoothing, ASNR enhancement, ROVER vote.
    OffTheShelf,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Undefended => "undefended",
            Preset::Trained => "trained",
            Preset::OffTheShelf => "off-the-shelf",
        }
    }

    pub fn uses_augmented_model(self) -> bool {
        self == Preset::Trained
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub baseline: Option<PathBuf>,
    pub augmented: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub enhance_config: EnhanceConfig,
    pub rover: RoverConfig,
}

impl Default for PresetConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            n_samples: 16,
            enhance_config: EnhanceConfig::default(),
            rover: RoverConfig::default(),
        }
    }
}

impl PresetConfig {
    pub fn smoothing(&self, preset: Preset) -> SmoothingConfig {
        match preset {
            Preset::Undefended => SmoothingConfig::undefended(),
            Preset::Trained | Preset::OffTheShelf => SmoothingConfig {
                sigma: self.sigma,
                n_samples: self.n_samples,
                enhance: preset == Preset::OffTheShelf,
                enhance_config: self.enhance_config.clone(),
                vote: VoteStrategy::Rover,
                rover: self.rover,
                seed: 0,
            },
        }
    }
}

/// Grid of the clean/noisy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseGrid {
    pub sigmas: Vec<f64>,
    pub votes: Vec<VoteStrategy>,
    /// Noisy copies drawn for every voting strategy except one-sentence.
    pub n_samples: usize,
    pub enhance: Vec<bool>,
    pub augmented: Vec<bool>,
}

impl Default for DefenseGrid {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.01, 0.02],
            votes: vec![
                VoteStrategy::OneSentence,
                VoteStrategy::Majority,
                VoteStrategy::LogitAvg,
                VoteStrategy::Rover,
            ],
            n_samples: 16,
            enhance: vec![false, true],
            augmented: vec![false, true],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdGrid {
    pub bounds_db: Vec<f64>,
    pub steps: usize,
    pub step_size: Option<f64>,
    pub eot_samples: usize,
    pub defenses: Vec<Preset>,
    /// Leading test utterances to attack; `None` attacks all of them.
    pub utterances: Option<usize>,
}

impl Default for PgdGrid {
    fn default() -> Self {
        Self {
            bounds_db: vec![35.0, 30.0, 25.0, 20.0, 15.0, 10.0],
            steps: 50,
            step_size: None,
            eot_samples: 16,
            defenses: vec![Preset::Undefended, Preset::Trained, Preset::OffTheShelf],
            utterances: Some(20),
        }
    }
}

impl PgdGrid {
    pub fn attack(&self, bound: f64) -> PgdConfig {
        PgdConfig {
            snr_bound_db: bound,
            steps: self.steps,
            step_size: self.step_size,
            eot_samples: self.eot_samples,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwGrid {
    pub targets: Vec<Transcript>,
    pub lambda_init: f64,
    pub lambda_update_every: usize,
    pub lambda_factor: f64,
    pub max_steps: usize,
    pub step_size: f64,
    pub eot_samples: usize,
    pub success_wer: f64,
    pub defenses: Vec<Preset>,
    pub utterances: Option<usize>,
}

impl Default for CwGrid {
    fn default() -> Self {
        let base = CwConfig::default();
        Self {
            targets: CW_TARGETS
                .iter()
                .map(|t| t.parse().expect("fixed targets are valid transcripts"))
                .collect(),
            lambda_init: base.lambda_init,
            lambda_update_every: base.lambda_update_every,
            lambda_factor: base.lambda_factor,
            max_steps: base.max_steps,
            step_size: base.step_size,
            eot_samples: base.eot_samples,
            success_wer: base.success_wer,
            defenses: vec![Preset::Undefended, Preset::Trained],
            utterances: Some(6),
        }
    }
}

impl CwGrid {
    /// The configured target closest in length to `truth` and different
    /// from it; ties go to the shorter target.
    pub fn target_for(&self, truth: &Transcript) -> Option<Transcript> {
        let mut targets: Vec<&Transcript> = self.targets.iter().filter(|t| *t != truth).collect();
        targets.sort_by_key(|t| (t.len().abs_diff(truth.len()), t.len()));
        targets.first().map(|t| (*t).clone())
    }

    pub fn attack(&self, target: Transcript) -> CwConfig {
        CwConfig {
            target,
            lambda_init: self.lambda_init,
            lambda_update_every: self.lambda_update_every,
            lambda_factor: self.lambda_factor,
            max_steps: self.max_steps,
            step_size: self.step_size,
            eot_samples: self.eot_samples,
            adaptive: true,
            success_wer: self.success_wer,
        }
    }
}

/// EoT-versus-vanilla PGD on one stochastic defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub bounds_db: Vec<f64>,
    pub steps: usize,
    pub eot_samples: usize,
    pub defense: Preset,
    pub utterances: Option<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            bounds_db: vec![35.0, 30.0, 25.0, 20.0, 15.0, 10.0],
            steps: 50,
            eot_samples: 16,
            defense: Preset::Trained,
            utterances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoverTimingConfig {
    pub sample_counts: Vec<usize>,
    /// Repetitions of each vote when timing it.
    pub repeats: usize,
    pub defense: Preset,
    pub utterances: Option<usize>,
}

impl Default for RoverTimingConfig {
    fn default() -> Self {
        Self {
            sample_counts: vec![2, 4, 8, 16, 32, 50],
            repeats: 5,
            defense: Preset::Trained,
            utterances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationConfig {
    pub cert: CertConfig,
    pub validation: ValidationConfig,
    /// Radius multiplier of the negative control.
    pub control_scale: f64,
    pub augmented: bool,
    pub utterances: Option<usize>,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self {
            cert: CertConfig::default(),
            validation: ValidationConfig::default(),
            control_scale: 3.0,
            augmented: true,
            utterances: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds training and every evaluation and attack stream. The corpus
    /// has its own seed in `corpus.seed`.
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Load the corpus from a `synth-data` directory instead of synthesizing it.
    pub corpus_dir: Option<PathBuf>,
    pub models: ModelPaths,
    pub train: TrainConfig,
    pub presets: PresetConfig,
    pub defenses: DefenseGrid,
    pub pgd: PgdGrid,
    pub cw: CwGrid,
    pub ablation: AblationGrid,
    pub rover_timing: RoverTimingConfig,
    pub certification: CertificationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusConfig {
                seed: 1,
                ..CorpusConfig::default()
            },
            corpus_dir: None,
            models: ModelPaths::default(),
            train: TrainConfig {
                sigma_aug: 0.02,
                ..TrainConfig::default()
            },
            presets: PresetConfig::default(),
            defenses: DefenseGrid::default(),
            pgd: PgdGrid::default(),
            cw: CwGrid::default(),
            ablation: AblationGrid::default(),
            rover_timing: RoverTimingConfig::default(),
            certification: CertificationConfig::default(),
        }
    }
}

fn non_empty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(HarnessError::config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Path of the baseline or augmented model, which must exist.
    pub fn model_path(&self, augmented: bool) -> Result<&Path> {
        let (p, role) = if augmented {
            (&self.models.augmented, "augmented")
        } else {
            (&self.models.baseline, "baseline")
        };
        let p = p
            .as_deref()
            .ok_or_else(|| HarnessError::Missing(format!("models.{role} must name a model file")))?;
        if !p.is_file() {
            return Err(HarnessError::Missing(format!("model file {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        resolve(&mut cfg.corpus_dir);
        resolve(&mut cfg.models.baseline);
        resolve(&mut cfg.models.augmented);
        Ok(cfg)
    }

    /// Checks value ranges, grid sizes and the corpus directory. Model paths
    /// are checked by [`ExperimentConfig::model_path`] when a command needs them.
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        for preset in [Preset::Trained, Preset::OffTheShelf] {
            self.presets.smoothing(preset).validate()?;
        }

        let d = &self.defenses;
        non_empty(&d.sigmas, "defenses.sigmas")?;
        non_empty(&d.votes, "defenses.votes")?;
        non_empty(&d.enhance, "defenses.enhance")?;
        non_empty(&d.augmented, "defenses.augmented")?;
        if d.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(HarnessError::config("defenses.sigmas must be finite and >= 0"));
        }
        if !(1..=MAX_SAMPLES).contains(&d.n_samples) {
            return Err(HarnessError::config(format!(
                "defenses.n_samples must lie in 1..={MAX_SAMPLES}"
            )));
        }

        non_empty(&self.pgd.bounds_db, "pgd.bounds_db")?;
        non_empty(&self.pgd.defenses, "pgd.defenses")?;
        for &b in &self.pgd.bounds_db {
            self.pgd.attack(b).validate()?;
        }

        non_empty(&self.cw.targets, "cw.targets")?;
        non_empty(&self.cw.defenses, "cw.defenses")?;
        if self.cw.targets.iter().any(Transcript::is_empty) {
            return Err(HarnessError::config("cw.targets must be non-empty sentences"));
        }
        self.cw.attack(self.cw.targets[0].clone()).validate()?;

        non_empty(&self.ablation.bounds_db, "ablation.bounds_db")?;
        if self.ablation.eot_samples == 0 {
            return Err(HarnessError::config("ablation.eot_samples must be >= 1"));
        }

        let rt = &self.rover_timing;
        non_empty(&rt.sample_counts, "rover_timing.sample_counts")?;
        if rt.sample_counts.iter().any(|&n| !(1..=MAX_SAMPLES).contains(&n)) {
            return Err(HarnessError::config(format!(
                "rover_timing.sample_counts must lie in 1..={MAX_SAMPLES}"
            )));
        }
        if rt.repeats == 0 {
            return Err(HarnessError::config("rover_timing.repeats must be >= 1"));
        }

        self.certification.cert.validate()?;
        if !(self.certification.control_scale > 0.0) {
            return Err(HarnessError::config("certification.control_scale must be positive"));
        }

        if let Some(dir) = &self.corpus_dir {
            if !dir.is_dir() {
                return Err(HarnessError::Missing(format!("corpus directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }
}
