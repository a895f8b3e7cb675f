//! The experiment grid. Each function runs one table of the study on
//! in-memory inputs; the CLI wraps them with file I/O.
//!
//! Randomness: utterance `i` of an experiment always uses the same stream
//! (`RngStream::new(seed, experiment).derive(..).derive(i)`), so defenses and
//! attack variants are compared on identical noise draws.

use std::collections::BTreeMap;
use std::time::Instant;

use asr_smooth::attacks::{cw_attack, pgd_attack, Defense, PgdConfig};
use asr_smooth::certify::{certify, validate_certificate, ValidationConfig, ValidationReport};
use asr_smooth::recognizer::{
    corpus::synth_corpus_with, fine_tune, train_clean, ModelParams, ToyCorpus, TrainConfig, Utterance,
};
use asr_smooth::signal::RngStream;
use asr_smooth::smoothing::{combine, smoothed_transcribe, SmoothingConfig, VoteStrategy};
use asr_smooth::voting::{rover, wer, Transcript};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Preset};
use crate::error::{HarnessError, Result};
use crate::output::{mean_percent, CertRow, Curve, ResultRow, TimingRow};

const STREAM_EVAL: u64 = 10;
const STREAM_PGD: u64 = 20;
const STREAM_CW: u64 = 30;
const STREAM_TIMING: u64 = 50;
const STREAM_CERTIFY: u64 = 60;
const STREAM_VALIDATE: u64 = 61;

/// Pass threshold on the fraction of in-ball perturbations.
pub const SOUNDNESS_LEVEL: f64 = 0.95;

/// Baseline and noise-augmented recognizers. Either may be absent when a
/// command does not need it.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub baseline: Option<ModelParams>,
    pub augmented: Option<ModelParams>,
}

impl Models {
    pub fn get(&self, augmented: bool) -> Result<&ModelParams> {
        let (m, name) = if augmented {
            (&self.augmented, "augmented")
        } else {
            (&self.baseline, "baseline")
        };
        m.as_ref()
            .ok_or_else(|| HarnessError::Missing(format!("the {name} model is required (set models.{name})")))
    }

    pub fn defense(&self, preset: Preset, cfg: &ExperimentConfig) -> Result<Defense<'_>> {
        let params = self.get(preset.uses_augmented_model())?;
        Ok(Defense::new(params, cfg.presets.smoothing(preset)))
    }
}

pub fn leading(test: &[Utterance], n: Option<usize>) -> &[Utterance] {
    &test[..n.unwrap_or(test.len()).min(test.len())]
}

/// The configured corpus: loaded from `corpus_dir` if set, else synthesized.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<ToyCorpus> {
    match &cfg.corpus_dir {
        Some(dir) => Ok(ToyCorpus::load(dir)?),
        None => Ok(synth_corpus_with(&cfg.corpus)?),
    }
}

/// One training log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
}

/// Trains the baseline and, when `train.sigma_aug > 0`, fine-tunes the
/// augmented variant from it.
pub fn train_models(cfg: &ExperimentConfig, corpus: &ToyCorpus) -> Result<(Models, Vec<EpochLoss>)> {
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let mut log = Vec::new();
    let baseline = train_clean(&corpus.train, &corpus.vocabulary, &train_cfg, &mut |epoch, loss| {
        log.push(EpochLoss {
            stage: "clean".into(),
            epoch,
            loss,
        })
    })?;
    let augmented = if train_cfg.sigma_aug > 0.0 {
        Some(fine_tune(&baseline, &corpus.train, &train_cfg, &mut |epoch, loss| {
            log.push(EpochLoss {
                stage: "augmented".into(),
                epoch,
                loss,
            })
        })?)
    } else {
        None
    };
    Ok((
        Models {
            baseline: Some(baseline),
            augmented,
        },
        log,
    ))
}

fn model_name(augmented: bool) -> &'static str {
    if augmented {
        "augmented"
    } else {
        "baseline"
    }
}

/// Clean and noisy WER over the defense grid. All voting strategies of a
/// cell share the same noisy copies; one-sentence uses the first of them.
pub fn eval_clean(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<Vec<ResultRow>> {
    let grid = &cfg.defenses;
    let root = RngStream::new(cfg.seed, STREAM_EVAL);
    let needs_many = grid.votes.iter().any(|v| *v != VoteStrategy::OneSentence);
    let drawn = if needs_many { grid.n_samples } else { 1 };
    let mut rows = Vec::new();
    for &augmented in &grid.augmented {
        let params = models.get(augmented)?;
        for &enhance in &grid.enhance {
            for &sigma in &grid.sigmas {
                let smoothing = SmoothingConfig {
                    sigma,
                    n_samples: drawn,
                    enhance,
                    enhance_config: cfg.presets.enhance_config.clone(),
                    vote: VoteStrategy::Majority,
                    rover: cfg.presets.rover,
                    seed: cfg.seed,
                };
                let mut wers = vec![Vec::with_capacity(test.len()); grid.votes.len()];
                let mut vote_secs = vec![0.0; grid.votes.len()];
                let mut sample_secs = 0.0;
                for (i, u) in test.iter().enumerate() {
                    let start = Instant::now();
                    let out = smoothed_transcribe(params, &u.waveform, &smoothing, &root.derive(i as u64))?;
                    sample_secs += start.elapsed().as_secs_f64();
                    for (vi, &vote) in grid.votes.iter().enumerate() {
                        let start = Instant::now();
                        let t = combine(vote, &out.samples, &out.logits, params, &cfg.presets.rover)?;
                        vote_secs[vi] += start.elapsed().as_secs_f64();
                        wers[vi].push(wer(&t, &u.transcript)?);
                    }
                }
                for (vi, &vote) in grid.votes.iter().enumerate() {
                    let used = if vote == VoteStrategy::OneSentence { 1 } else { drawn };
                    rows.push(ResultRow {
                        experiment: "eval-clean".into(),
                        defense: format!(
                            "model={} sigma={sigma} enhance={enhance} vote={} n={used}",
                            model_name(augmented),
                            vote.name()
                        ),
                        attack: "none".into(),
                        utterances: test.len(),
                        wer_ground_truth: mean_percent(&wers[vi]),
                        wer_target: None,
                        snr_db: None,
                        success: None,
                        wall_time_s: sample_secs * used as f64 / drawn as f64 + vote_secs[vi],
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Outcome of one attack on one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub utterance: String,
    /// Fractions in `[0, 1]`.
    pub wer_ground_truth: f64,
    pub wer_target: Option<f64>,
    pub snr_db: f64,
    pub success: bool,
    pub gradient_failed: bool,
}

/// One (defense, attack) cell over a set of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCell {
    pub defense: String,
    pub attack: String,
    pub snr_bound_db: Option<f64>,
    pub outcomes: Vec<AttackOutcome>,
    pub wall_time_s: f64,
}

impl AttackCell {
    pub fn mean_wer_percent(&self) -> f64 {
        let w: Vec<f64> = self.outcomes.iter().map(|o| o.wer_ground_truth).collect();
        mean_percent(&w)
    }

    pub fn row(&self, experiment: &str) -> ResultRow {
        let n = self.outcomes.len();
        let tgt: Vec<f64> = self.outcomes.iter().filter_map(|o| o.wer_target).collect();
        let snrs: Vec<f64> = self
            .outcomes
            .iter()
            .map(|o| o.snr_db)
            .filter(|s| s.is_finite())
            .collect();
        ResultRow {
            experiment: experiment.into(),
            defense: self.defense.clone(),
            attack: self.attack.clone(),
            utterances: n,
            wer_ground_truth: self.mean_wer_percent(),
            wer_target: (!tgt.is_empty()).then(|| mean_percent(&tgt)),
            snr_db: (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64),
            success: None,
            wall_time_s: self.wall_time_s,
        }
    }
}

fn bound_stream(seed: u64, experiment: u64, bound: f64) -> RngStream {
    RngStream::new(seed, experiment).derive(bound.to_bits())
}

/// PGD on every utterance of `test` against one defense.
pub fn pgd_cell(
    defense: &Defense<'_>,
    defense_name: &str,
    test: &[Utterance],
    attack: &PgdConfig,
    root: &RngStream,
) -> Result<AttackCell> {
    let start = Instant::now();
    let mut outcomes = Vec::with_capacity(test.len());
    for (i, u) in test.iter().enumerate() {
        let r = pgd_attack(defense, &u.waveform, &u.transcript, attack, &root.derive(i as u64))?;
        outcomes.push(AttackOutcome {
            utterance: u.id.clone(),
            wer_ground_truth: r.wer_ground_truth,
            wer_target: None,
            snr_db: r.achieved_snr_db,
            success: r.success,
            gradient_failed: r.gradient_failed,
        });
    }
    let kind = if attack.eot_samples > 1 {
        format!("eot-{}", attack.eot_samples)
    } else {
        "vanilla".to_owned()
    };
    Ok(AttackCell {
        defense: defense_name.into(),
        attack: format!("pgd-{kind} snr>={}", attack.snr_bound_db),
        snr_bound_db: Some(attack.snr_bound_db),
        outcomes,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// PGD sweep over defenses and SNR bounds.
pub fn attack_pgd(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<Vec<AttackCell>> {
    let test = leading(test, cfg.pgd.utterances);
    let mut cells = Vec::new();
    for &preset in &cfg.pgd.defenses {
        let defense = models.defense(preset, cfg)?;
        for &bound in &cfg.pgd.bounds_db {
            let root = bound_stream(cfg.seed, STREAM_PGD, bound);
            cells.push(pgd_cell(&defense, preset.name(), test, &cfg.pgd.attack(bound), &root)?);
        }
    }
    Ok(cells)
}

/// One WER-versus-bound curve per defense, in first-seen order.
pub fn curves(cells: &[AttackCell]) -> Vec<Curve> {
    let mut out: Vec<Curve> = Vec::new();
    for c in cells {
        let Some(bound) = c.snr_bound_db else { continue };
        let point = (bound, c.mean_wer_percent());
        match out.iter_mut().find(|k| k.defense == c.defense) {
            Some(k) => k.points.push(point),
            None => out.push(Curve {
                defense: c.defense.clone(),
                points: vec![point],
            }),
        }
    }
    out
}

/// Targeted CW against each configured defense. Each utterance gets the
/// configured target closest to it in length.
pub fn attack_cw(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<Vec<AttackCell>> {
    let test = leading(test, cfg.cw.utterances);
    let root = RngStream::new(cfg.seed, STREAM_CW);
    let mut cells = Vec::new();
    for &preset in &cfg.cw.defenses {
        let defense = models.defense(preset, cfg)?;
        let start = Instant::now();
        let mut outcomes = Vec::with_capacity(test.len());
        for (i, u) in test.iter().enumerate() {
            let target = cfg
                .cw
                .target_for(&u.transcript)
                .ok_or_else(|| HarnessError::config(format!("no CW target differs from `{}`", u.transcript)))?;
            let (r, _) = cw_attack(&defense, &u.waveform, &u.transcript, &cfg.cw.attack(target), &root.derive(i as u64))?;
            outcomes.push(AttackOutcome {
                utterance: u.id.clone(),
                wer_ground_truth: r.wer_ground_truth,
                wer_target: r.wer_target,
                snr_db: r.achieved_snr_db,
                success: r.success,
                gradient_failed: r.gradient_failed,
            });
        }
        cells.push(AttackCell {
            defense: preset.name().into(),
            attack: format!("cw-eot-{}", cfg.cw.eot_samples),
            snr_bound_db: None,
            outcomes,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(cells)
}

/// Per-utterance CW rows followed by one summary row per defense. The
/// summary SNR averages successful attacks only.
pub fn cw_rows(cells: &[AttackCell]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for c in cells {
        for o in &c.outcomes {
            rows.push(ResultRow {
                experiment: format!("attack-cw/{}", o.utterance),
                defense: c.defense.clone(),
                attack: c.attack.clone(),
                utterances: 1,
                wer_ground_truth: 100.0 * o.wer_ground_truth,
                wer_target: o.wer_target.map(|w| 100.0 * w),
                snr_db: Some(o.snr_db),
                success: Some(o.success),
                wall_time_s: c.wall_time_s / c.outcomes.len() as f64,
            });
        }
        let successful = AttackCell {
            outcomes: c.outcomes.iter().filter(|o| o.success).cloned().collect(),
            ..c.clone()
        };
        let mut summary = c.row("attack-cw/mean");
        summary.snr_db = successful.row("").snr_db;
        rows.push(summary);
    }
    rows
}

/// EoT-versus-vanilla PGD on one defense. Both variants of a bound share
/// their random streams.
pub fn ablation_adaptive(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<Vec<AttackCell>> {
    let grid = &cfg.ablation;
    let test = leading(test, grid.utterances);
    let defense = models.defense(grid.defense, cfg)?;
    let mut cells = Vec::new();
    for &bound in &grid.bounds_db {
        let root = bound_stream(cfg.seed, STREAM_PGD, bound);
        let vanilla = PgdConfig {
            steps: grid.steps,
            ..PgdConfig::vanilla(bound)
        };
        let adaptive = PgdConfig {
            snr_bound_db: bound,
            steps: grid.steps,
            eot_samples: grid.eot_samples,
            ..PgdConfig::default()
        };
        for attack in [vanilla, adaptive] {
            cells.push(pgd_cell(&defense, grid.defense.name(), test, &attack, &root)?);
        }
    }
    Ok(cells)
}

/// ROVER vote time and WER as the number of voted samples grows. Smaller
/// counts vote over a prefix of the same noisy copies.
pub fn rover_timing(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<Vec<TimingRow>> {
    let rt = &cfg.rover_timing;
    let test = leading(test, rt.utterances);
    let params = models.get(rt.defense.uses_augmented_model())?;
    let max_n = *rt.sample_counts.iter().max().expect("validated non-empty");
    let smoothing = SmoothingConfig {
        n_samples: max_n,
        vote: VoteStrategy::Majority,
        ..cfg.presets.smoothing(rt.defense)
    };
    let root = RngStream::new(cfg.seed, STREAM_TIMING);
    let mut hyps = Vec::with_capacity(test.len());
    for (i, u) in test.iter().enumerate() {
        let out = smoothed_transcribe(params, &u.waveform, &smoothing, &root.derive(i as u64))?;
        hyps.push(out.samples.into_iter().map(|s| s.word_hyps).collect::<Vec<_>>());
    }
    let mut rows = Vec::new();
    for &n in &rt.sample_counts {
        let mut secs = 0.0;
        let mut wers = Vec::with_capacity(test.len());
        for (u, h) in test.iter().zip(&hyps) {
            let subset = &h[..n.min(h.len())];
            let mut voted = Transcript::empty();
            let start = Instant::now();
            for _ in 0..rt.repeats {
                voted = rover(std::hint::black_box(subset), &cfg.presets.rover)?;
            }
            secs += start.elapsed().as_secs_f64() / rt.repeats as f64;
            wers.push(wer(&voted, &u.transcript)?);
        }
        rows.push(TimingRow {
            n_samples: n,
            vote_time_s: secs / test.len().max(1) as f64,
            wer: mean_percent(&wers),
        });
    }
    Ok(rows)
}

/// Certificates plus their Monte Carlo validation and inflated-radius control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationRun {
    pub rows: Vec<CertRow>,
    pub reports: BTreeMap<String, ValidationReport>,
    pub control_reports: BTreeMap<String, ValidationReport>,
}

/// Pooled statistics of a certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationSummary {
    pub attempted: usize,
    pub certified: usize,
    /// Passing perturbations over all sampled ones, at the certified radius.
    pub pooled_pass_fraction: f64,
    pub pooled_control_pass_fraction: f64,
    /// Certified utterances whose control pass fraction fell below the level.
    pub control_failures: usize,
}

impl CertificationRun {
    pub fn summary(&self) -> CertificationSummary {
        let pooled = |m: &BTreeMap<String, ValidationReport>| {
            let (passed, total) = m
                .values()
                .fold((0, 0), |(p, t), r| (p + r.passed, t + r.estimates.len()));
            if total == 0 {
                1.0
            } else {
                passed as f64 / total as f64
            }
        };
        CertificationSummary {
            attempted: self.rows.len(),
            certified: self.rows.iter().filter(|r| !r.abstained).count(),
            pooled_pass_fraction: pooled(&self.reports),
            pooled_control_pass_fraction: pooled(&self.control_reports),
            control_failures: self
                .control_reports
                .values()
                .filter(|r| r.pass_fraction() < SOUNDNESS_LEVEL)
                .count(),
        }
    }
}

pub fn certify_run(cfg: &ExperimentConfig, test: &[Utterance], models: &Models) -> Result<CertificationRun> {
    let c = &cfg.certification;
    let test = leading(test, c.utterances);
    let params = models.get(c.augmented)?;
    let cert_root = RngStream::new(cfg.seed, STREAM_CERTIFY);
    let val_root = RngStream::new(cfg.seed, STREAM_VALIDATE);
    let control = ValidationConfig {
        radius_scale: c.validation.radius_scale * c.control_scale,
        ..c.validation.clone()
    };
    let mut run = CertificationRun {
        rows: Vec::with_capacity(test.len()),
        reports: BTreeMap::new(),
        control_reports: BTreeMap::new(),
    };
    for (i, u) in test.iter().enumerate() {
        let cert = certify(params, &u.waveform, &c.cert, &cert_root.derive(i as u64))?;
        let (mut pass, mut control_pass) = (None, None);
        if !cert.abstained() {
            let stream = val_root.derive(i as u64);
            let report = validate_certificate(params, &u.waveform, &cert, &c.cert, &c.validation, &stream)?;
            let control_report = validate_certificate(params, &u.waveform, &cert, &c.cert, &control, &stream)?;
            pass = Some(report.pass_fraction());
            control_pass = Some(control_report.pass_fraction());
            run.reports.insert(u.id.clone(), report);
            run.control_reports.insert(u.id.clone(), control_report);
        }
        run.rows.push(CertRow {
            utterance: u.id.clone(),
            sigma: c.cert.sigma,
            k: c.cert.k,
            n: cert.n,
            successes: cert.successes,
            p_lower: cert.p_lower,
            radius: cert.radius.value(),
            abstained: cert.abstained(),
            top_transcript: cert.top_transcript.to_string(),
            pass_fraction: pass,
            control_pass_fraction: control_pass,
        });
    }
    Ok(run)
}
