//! Subcommand dispatch: load inputs, run one experiment, write its files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use asr_smooth::recognizer::{ModelParams, ToyCorpus};
use clap::ValueEnum;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiments::{self, Models};
use crate::output::{self, Manifest, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    SynthData,
    Train,
    EvalClean,
    AttackPgd,
    AttackCw,
    AblationAdaptive,
    RoverTiming,
    Certify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Train => "train",
            Command::EvalClean => "eval-clean",
            Command::AttackPgd => "attack-pgd",
            Command::AttackCw => "attack-cw",
            Command::AblationAdaptive => "ablation-adaptive",
            Command::RoverTiming => "rover-timing",
            Command::Certify => "certify",
        }
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_owned());
        self.dir.join(name)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let p = self.path(name);
        output::write_csv(&p, rows)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        output::write_text(&p, &serde_json::to_string_pretty(value)?)
    }
}

fn load_models(cfg: &ExperimentConfig, baseline: bool, augmented: bool) -> Result<(Models, BTreeMap<String, String>)> {
    let mut models = Models::default();
    let mut hashes = BTreeMap::new();
    for (wanted, is_aug) in [(baseline, false), (augmented, true)] {
        if !wanted {
            continue;
        }
        let path = cfg.model_path(is_aug)?;
        let role = if is_aug { "augmented" } else { "baseline" };
        hashes.insert(role.to_owned(), output::sha256_file(path)?);
        let m = Some(ModelParams::load(path)?);
        if is_aug {
            models.augmented = m;
        } else {
            models.baseline = m;
        }
    }
    Ok((models, hashes))
}

/// Which models a command needs, as (baseline, augmented).
fn model_needs(cmd: Command, cfg: &ExperimentConfig) -> (bool, bool) {
    let from_presets = |presets: &[crate::Preset]| {
        (
            presets.iter().any(|p| !p.uses_augmented_model()),
            presets.iter().any(|p| p.uses_augmented_model()),
        )
    };
    match cmd {
        Command::SynthData | Command::Train => (false, false),
        Command::EvalClean => (
            cfg.defenses.augmented.contains(&false),
            cfg.defenses.augmented.contains(&true),
        ),
        Command::AttackPgd => from_presets(&cfg.pgd.defenses),
        Command::AttackCw => from_presets(&cfg.cw.defenses),
        Command::AblationAdaptive => from_presets(&[cfg.ablation.defense]),
        Command::RoverTiming => from_presets(&[cfg.rover_timing.defense]),
        Command::Certify => (!cfg.certification.augmented, cfg.certification.augmented),
    }
}

/// Runs `cmd` and writes its outputs, the effective config and a manifest
/// into `out`. `seed` overrides `cfg.seed`.
pub fn run(cmd: Command, mut cfg: ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<Manifest> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let config_json = serde_json::to_string_pretty(&cfg)?;
    let mut files = Outputs {
        dir: out,
        written: Vec::new(),
    };
    let p = files.path("config.json");
    output::write_text(&p, &config_json)?;

    let (needs_base, needs_aug) = model_needs(cmd, &cfg);
    let (models, mut model_hashes) = load_models(&cfg, needs_base, needs_aug)?;
    let corpus = || -> Result<ToyCorpus> { experiments::load_corpus(&cfg) };

    match cmd {
        Command::SynthData => {
            let c = corpus()?;
            let dir = files.path("corpus");
            c.save(&dir)?;
        }
        Command::Train => {
            let c = corpus()?;
            let (trained, log) = experiments::train_models(&cfg, &c)?;
            for (role, m) in [("baseline", &trained.baseline), ("augmented", &trained.augmented)] {
                if let Some(m) = m {
                    let p = files.path(&format!("{role}.json"));
                    m.save(&p)?;
                    model_hashes.insert(role.to_owned(), output::sha256_file(&p)?);
                }
            }
            files.csv("train_log.csv", &log)?;
        }
        Command::EvalClean => {
            let rows = experiments::eval_clean(&cfg, &corpus()?.test, &models)?;
            files.csv("eval_clean.csv", &rows)?;
        }
        Command::AttackPgd => {
            let cells = experiments::attack_pgd(&cfg, &corpus()?.test, &models)?;
            let rows: Vec<ResultRow> = cells.iter().map(|c| c.row("attack-pgd")).collect();
            files.csv("attack_pgd.csv", &rows)?;
            files.json("attack_pgd.json", &cells)?;
            for curve in experiments::curves(&cells) {
                let p = files.path(&format!("pgd_{}.dat", curve.defense));
                output::write_text(&p, &output::gnuplot_data(&curve))?;
            }
        }
        Command::AttackCw => {
            let cells = experiments::attack_cw(&cfg, &corpus()?.test, &models)?;
            files.csv("attack_cw.csv", &experiments::cw_rows(&cells))?;
            files.json("attack_cw.json", &cells)?;
        }
        Command::AblationAdaptive => {
            let cells = experiments::ablation_adaptive(&cfg, &corpus()?.test, &models)?;
            let rows: Vec<ResultRow> = cells.iter().map(|c| c.row("ablation-adaptive")).collect();
            files.csv("ablation_adaptive.csv", &rows)?;
            files.json("ablation_adaptive.json", &cells)?;
        }
        Command::RoverTiming => {
            let rows = experiments::rover_timing(&cfg, &corpus()?.test, &models)?;
            files.csv("rover_timing.csv", &rows)?;
        }
        Command::Certify => {
            let run = experiments::certify_run(&cfg, &corpus()?.test, &models)?;
            files.csv("certify.csv", &run.rows)?;
            files.json("certify_summary.json", &run.summary())?;
            files.json("validation.json", &run)?;
        }
    }

    let manifest = Manifest {
        command: cmd.name().to_owned(),
        config_sha256: output::sha256_hex(config_json.as_bytes()),
        seed: cfg.seed,
        corpus_seed: cfg.corpus.seed,
        corpus_dir: cfg.corpus_dir.clone(),
        models: model_hashes,
        outputs: files.written.clone(),
        versions: Manifest::versions(),
    };
    let p = out.join("manifest.json");
    output::write_text(&p, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
