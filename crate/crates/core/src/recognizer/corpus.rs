//! Synthetic ten-word corpus.
//!
//! Each word lasts `word_secs` and is split into equal segments, one per
//! letter. A letter is a fixed pair of formants (one low, one high). Voiced
//! letters are harmonic series on a per-word fundamental shaped by the two
//! formant resonances; unvoiced rendering uses the bare formant tones. Words
//! are separated by `gap_secs` of silence and the utterance is padded with
//! `pad_secs` on both sides. Every utterance carries a faint white background floor.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::signal::{read_wav, write_wav, RngStream, Waveform, SAMPLE_RATE};
use crate::voting::Transcript;

pub const WORDS: [&str; 10] = ["up", "down", "left", "stop", "go", "yes", "no", "on", "run", "turn"];

/// Space first, then the letters used by [`WORDS`].
pub const ALPHABET: &str = " degflnoprstuwy";

const LOW_TONES: [f64; 4] = [300.0, 650.0, 1000.0, 1350.0];
const HIGH_TONES: [f64; 5] = [1800.0, 2250.0, 2700.0, 3150.0, 3600.0];
const HIGH_TONE_GAIN: f64 = 0.7;
const RAMP_SECS: f64 = 0.005;
const FORMANT_BANDWIDTH: f64 = 100.0;
const MAX_HARMONIC_HZ: f64 = 4000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub max_words: usize,
    pub word_secs: f64,
    pub gap_secs: f64,
    pub pad_secs: f64,
    /// Utterance amplitude drawn uniformly from this range.
    pub gain: (f64, f64),
    /// Background noise deviation, log-uniform in this range.
    pub noise_floor: (f64, f64),
    /// Relative frequency jitter applied per word.
    pub pitch_jitter: f64,
    /// Fundamental of voiced letters, drawn uniformly per word. `None`
    /// renders each letter as its bare tone pair.
    pub voicing: Option<(f64, f64)>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_test: 100,
            max_words: 6,
            word_secs: 0.2,
            gap_secs: 0.05,
            pad_secs: 0.05,
            gain: (0.03, 0.07),
            noise_floor: (0.0005, 0.004),
            pitch_jitter: 0.03,
            voicing: Some((80.0, 140.0)),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::domain("corpus splits must be non-empty"));
        }
        if self.max_words == 0 {
            return Err(Error::domain("sentences need at least one word"));
        }
        if !(self.word_secs > 0.0 && self.gap_secs >= 0.0 && self.pad_secs >= 0.0) {
            return Err(Error::domain("segment durations must be positive"));
        }
        if !(0.0 < self.gain.0 && self.gain.0 <= self.gain.1) {
            return Err(Error::domain("gain range must be positive and ordered"));
        }
        if let Some((lo, hi)) = self.voicing {
            if !(0.0 < lo && lo <= hi && hi < MAX_HARMONIC_HZ) {
                return Err(Error::domain("voicing range must be positive, ordered and audible"));
            }
        }
        if !(0.0 < self.noise_floor.0 && self.noise_floor.0 <= self.noise_floor.1) {
            return Err(Error::domain("noise floor range must be positive and ordered"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub vocabulary: Vocabulary,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Low and high tone of a letter.
pub fn letter_tones(c: char) -> Option<(f64, f64)> {
    let i = ALPHABET.chars().skip(1).position(|x| x == c)?;
    Some((LOW_TONES[i % LOW_TONES.len()], HIGH_TONES[i / LOW_TONES.len()]))
}

fn secs_to_samples(secs: f64) -> usize {
    (secs * SAMPLE_RATE as f64).round() as usize
}

/// Relative amplitude of each harmonic of `f0` below [`MAX_HARMONIC_HZ`]
/// for a letter with formants `lo` and `hi`, scaled to the power of the
/// plain two-tone letter.
fn harmonic_amplitudes(f0: f64, lo: f64, hi: f64) -> Vec<f64> {
    let resonance = |f: f64, centre: f64| 1.0 / (1.0 + ((f - centre) / FORMANT_BANDWIDTH).powi(2));
    let amps: Vec<f64> = (1..)
        .map(|h| h as f64 * f0)
        .take_while(|&f| f < MAX_HARMONIC_HZ)
        .map(|f| resonance(f, lo) + HIGH_TONE_GAIN * resonance(f, hi))
        .collect();
    let power: f64 = amps.iter().map(|a| a * a).sum();
    let scale = ((1.0 + HIGH_TONE_GAIN * HIGH_TONE_GAIN) / power).sqrt();
    amps.into_iter().map(|a| a * scale).collect()
}

/// Render one word into `out`, which must be exactly one word long.
fn render_word(word: &str, amp: f64, pitch: f64, f0: Option<f64>, rng: &mut impl Rng, out: &mut [f64]) {
    let letters: Vec<char> = word.chars().collect();
    let seg = out.len() / letters.len();
    let ramp = secs_to_samples(RAMP_SECS);
    let sr = SAMPLE_RATE as f64;
    for (li, &c) in letters.iter().enumerate() {
        let (lo, hi) = letter_tones(c).expect("corpus words use the corpus alphabet");
        let (lo, hi) = (lo * pitch, hi * pitch);
        let partials: Vec<(f64, f64)> = match f0 {
            None => vec![(lo, 1.0), (hi, HIGH_TONE_GAIN)],
            Some(f0) => harmonic_amplitudes(f0, lo, hi)
                .into_iter()
                .enumerate()
                .map(|(h, a)| ((h + 1) as f64 * f0, a))
                .collect(),
        };
        let phases: Vec<f64> = partials.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let start = li * seg;
        let end = if li + 1 == letters.len() { out.len() } else { start + seg };
        let len = end - start;
        for n in 0..len {
            let edge = n.min(len - 1 - n);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let t = n as f64 / sr;
            let v: f64 = partials
                .iter()
                .zip(&phases)
                .map(|(&(f, a), &p)| a * (2.0 * PI * f * t + p).sin())
                .sum();
            out[start + n] = amp * env * v;
        }
    }
}

/// Waveform for `transcript`, drawing all randomness from `stream`.
pub fn synthesize(transcript: &Transcript, cfg: &CorpusConfig, stream: &RngStream) -> Result<Waveform> {
    if transcript.is_empty() {
        return Err(Error::domain("cannot synthesize an empty transcript"));
    }
    let mut rng = stream.rng();
    let word_len = secs_to_samples(cfg.word_secs);
    let gap = secs_to_samples(cfg.gap_secs);
    let pad = secs_to_samples(cfg.pad_secs);
    let n = transcript.len();
    let total = 2 * pad + n * word_len + (n - 1) * gap;
    let mut samples = vec![0.0; total];
    let gain = rng.random_range(cfg.gain.0..=cfg.gain.1);
    for (i, w) in transcript.words().iter().enumerate() {
        if !WORDS.contains(&w.as_str()) {
            return Err(Error::domain(format!("{w:?} is not a corpus word")));
        }
        let pitch = 1.0 + rng.random_range(-cfg.pitch_jitter..=cfg.pitch_jitter);
        let amp = gain * rng.random_range(0.8..1.2);
        let off = pad + i * (word_len + gap);
        let f0 = cfg.voicing.map(|(lo, hi)| rng.random_range(lo..=hi));
        render_word(w, amp, pitch, f0, &mut rng, &mut samples[off..off + word_len]);
    }
    let (lo, hi) = cfg.noise_floor;
    let floor = (lo.ln() + rng.random_range(0.0..=1.0) * (hi.ln() - lo.ln())).exp();
    let noise = stream.derive(1).gaussian(total, floor);
    for (s, e) in samples.iter_mut().zip(noise) {
        *s += e;
    }
    Waveform::from_samples(samples)
}

fn random_sentence(rng: &mut impl Rng, max_words: usize) -> Transcript {
    let n = rng.random_range(1..=max_words);
    Transcript::new((0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]))
        .expect("corpus words are valid tokens")
}

pub fn synth_corpus(seed: u64, n_train: usize, n_test: usize) -> Result<ToyCorpus> {
    synth_corpus_with(&CorpusConfig {
        seed,
        n_train,
        n_test,
        ..CorpusConfig::default()
    })
}

/// Deterministic in `cfg`. No test sentence also occurs in the training split.
pub fn synth_corpus_with(cfg: &CorpusConfig) -> Result<ToyCorpus> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let mut sentence_rng = root.derive(1).rng();
    let train_sents: Vec<Transcript> = (0..cfg.n_train)
        .map(|_| random_sentence(&mut sentence_rng, cfg.max_words))
        .collect();
    let seen: HashSet<&Transcript> = train_sents.iter().collect();
    let mut test_sents = Vec::with_capacity(cfg.n_test);
    let mut attempts = 0usize;
    while test_sents.len() < cfg.n_test {
        attempts += 1;
        if attempts > 1000 * cfg.n_test + 10_000 {
            return Err(Error::domain("could not draw enough unseen test sentences"));
        }
        let s = random_sentence(&mut sentence_rng, cfg.max_words);
        if !seen.contains(&s) {
            test_sents.push(s);
        }
    }
    let render = |split: &str, tag: u64, sents: Vec<Transcript>| -> Result<Vec<Utterance>> {
        sents
            .into_iter()
            .enumerate()
            .map(|(i, transcript)| {
                let stream = root.derive(tag).derive(i as u64);
                Ok(Utterance {
                    id: format!("{split}-{i:04}"),
                    waveform: synthesize(&transcript, cfg, &stream)?,
                    transcript,
                })
            })
            .collect()
    };
    Ok(ToyCorpus {
        vocabulary: Vocabulary::new(ALPHABET)?,
        train: render("train", 2, train_sents)?,
        test: render("test", 3, test_sents)?,
    })
}

impl ToyCorpus {
    /// Writes `wav/<id>.wav` plus `train.tsv` and `test.tsv` manifests
    /// (`utterance-id TAB transcript`).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let wav_dir = dir.join("wav");
        std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
        for (name, split) in [("train.tsv", &self.train), ("test.tsv", &self.test)] {
            let mut manifest = String::new();
            for u in split {
                write_wav(wav_dir.join(format!("{}.wav", u.id)), &u.waveform)?;
                let _ = writeln!(manifest, "{}\t{}", u.id, u.transcript);
            }
            let path = dir.join(name);
            std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read_split = |name: &str| -> Result<Vec<Utterance>> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, line)| {
                    let (id, words) = line.split_once('\t').ok_or_else(|| Error::Parse {
                        context: format!("{name} line {}", i + 1),
                        detail: "expected `id<TAB>transcript`".into(),
                    })?;
                    Ok(Utterance {
                        id: id.to_owned(),
                        waveform: read_wav(dir.join("wav").join(format!("{id}.wav")))?,
                        transcript: words.parse()?,
                    })
                })
                .collect()
        };
        Ok(Self {
            vocabulary: Vocabulary::new(ALPHABET)?,
            train: read_split("train.tsv")?,
            test: read_split("test.tsv")?,
        })
    }
}
