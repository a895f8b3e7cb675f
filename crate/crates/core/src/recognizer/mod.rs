//! Toy CTC recognizer: synthetic corpus, log-power features, a per-frame
//! MLP, CTC loss with gradients back to the waveform, and greedy decoding.

pub mod corpus;
pub mod ctc;
pub mod features;
mod model;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voting::{Transcript, WordHypothesis};

pub use corpus::{synth_corpus, CorpusConfig, ToyCorpus, Utterance, WORDS};
pub use features::FeatureConfig;
pub use model::{grad_input, ForwardCache, Layer, ModelParams, MODEL_FORMAT_VERSION};
pub use train::{fine_tune, train, train_clean, Optimizer, TrainConfig};

/// Output alphabet. Class 0 is the CTC blank; character `i` is class `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Vocabulary {
    chars: Vec<char>,
}

impl Vocabulary {
    pub const BLANK: usize = 0;

    /// Space, if present, separates words.
    pub fn new(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(Error::domain("vocabulary needs at least one character"));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::domain(format!("duplicate vocabulary character {c:?}")));
            }
            if c.is_whitespace() && *c != ' ' {
                return Err(Error::domain(format!("unsupported whitespace {c:?}")));
            }
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Characters plus the blank.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn class_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    pub fn char_of(&self, class: usize) -> Option<char> {
        class.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }

    /// CTC label sequence of a transcript.
    ///
    /// With a space in the vocabulary every word is delimited by a space on
    /// both sides (`" go up "`), so each stretch of silence after a word maps
    /// to the same symbol whether or not another word follows. Without one,
    /// the words are concatenated.
    pub fn encode(&self, t: &Transcript) -> Result<Vec<usize>> {
        let text = if t.is_empty() {
            String::new()
        } else if self.class_of(' ').is_some() {
            format!(" {t} ")
        } else {
            t.words().concat()
        };
        text.chars()
            .map(|c| {
                self.class_of(c)
                    .ok_or_else(|| Error::domain(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }
}

impl TryFrom<String> for Vocabulary {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<Vocabulary> for String {
    fn from(v: Vocabulary) -> String {
        v.chars.into_iter().collect()
    }
}

/// Per-frame class scores (pre-softmax) of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSequence {
    /// `T × num_classes`.
    pub values: Array2<f64>,
    /// Start time of each frame in seconds.
    pub frame_times: Vec<f64>,
    pub hop_secs: f64,
}

impl LogitsSequence {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub transcript: Transcript,
    /// First frame of each emitted character, spaces included.
    pub char_alignment: Vec<usize>,
    pub word_hyps: Vec<WordHypothesis>,
}

fn softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Best-path decoding: per-frame argmax (lowest class wins ties), collapse
/// repeats, drop blanks.
///
/// A word starts at its first character's frame and lasts until one hop past
/// its last character's frame. Confidence is the mean softmax probability of
/// the word's characters at their aligned frames.
pub fn greedy_decode(logits: &LogitsSequence, vocab: &Vocabulary) -> DecodeResult {
    let mut emitted: Vec<(char, usize, f64)> = Vec::new();
    let mut prev = None;
    for (t, row) in logits.values.rows().into_iter().enumerate() {
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if Some(best) != prev && best != Vocabulary::BLANK {
            if let Some(ch) = vocab.char_of(best) {
                emitted.push((ch, t, softmax_row(row)[best]));
            }
        }
        prev = Some(best);
    }

    let mut word_hyps = Vec::new();
    for group in emitted.split(|(c, _, _)| *c == ' ') {
        let (Some(first), Some(last)) = (group.first(), group.last()) else {
            continue;
        };
        let word: String = group.iter().map(|(c, _, _)| *c).collect();
        let start = logits.frame_times.get(first.1).copied().unwrap_or(0.0).max(0.0);
        let duration = (last.1 - first.1 + 1) as f64 * logits.hop_secs;
        let confidence = group.iter().map(|g| g.2).sum::<f64>() / group.len() as f64;
        word_hyps.push(WordHypothesis {
            word,
            start,
            duration,
            confidence: confidence.clamp(0.0, 1.0),
        });
    }
    DecodeResult {
        transcript: crate::voting::transcript_of(&word_hyps),
        char_alignment: emitted.iter().map(|e| e.1).collect(),
        word_hyps,
    }
}

/// `−log P(target | logits)` under CTC.
pub fn ctc_loss(logits: &LogitsSequence, target: &Transcript, vocab: &Vocabulary) -> Result<f64> {
    ctc::ctc_loss_labels(&logits.values, &vocab.encode(target)?, Vocabulary::BLANK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(classes: &[usize], n: usize) -> LogitsSequence {
        let mut values = Array2::zeros((classes.len(), n));
        for (t, &c) in classes.iter().enumerate() {
            values[[t, c]] = 5.0;
        }
        LogitsSequence {
            frame_times: (0..classes.len()).map(|t| t as f64 * 0.01).collect(),
            values,
            hop_secs: 0.01,
        }
    }

    #[test]
    fn vocabulary_indices() {
        let v = Vocabulary::new(" ab").unwrap();
        assert_eq!(v.num_classes(), 4);
        assert_eq!(v.class_of(' '), Some(1));
        assert_eq!(v.char_of(3), Some('b'));
        assert_eq!(v.char_of(0), None);
        assert_eq!(v.encode(&"ab b".parse().unwrap()).unwrap(), vec![1, 2, 3, 1, 3, 1]);
        assert_eq!(v.encode(&Transcript::empty()).unwrap(), Vec::<usize>::new());
        let no_space = Vocabulary::new("ab").unwrap();
        assert_eq!(no_space.encode(&"ab b".parse().unwrap()).unwrap(), vec![1, 2, 2]);
        assert!(v.encode(&"c".parse().unwrap()).is_err());
        assert!(Vocabulary::new("aa").is_err());
        assert!(Vocabulary::new("").is_err());
    }

    #[test]
    fn collapse_rules() {
        let v = Vocabulary::new("abehlo").unwrap();
        let cls = |c| v.class_of(c).unwrap();
        let d = greedy_decode(&one_hot(&[cls('a'), cls('a'), 0, cls('b')], 7), &v);
        assert_eq!(d.transcript.to_string(), "ab");
        let d = greedy_decode(&one_hot(&[cls('a'), 0, cls('a')], 7), &v);
        assert_eq!(d.transcript.to_string(), "aa");
        let path = [cls('h'), cls('h'), cls('e'), 0, cls('l'), cls('l'), 0, cls('l'), cls('o')];
        let d = greedy_decode(&one_hot(&path, 7), &v);
        assert_eq!(d.transcript.to_string(), "hello");
        assert_eq!(d.char_alignment, vec![0, 2, 4, 7, 8]);
    }

    #[test]
    fn word_timing_from_alignment() {
        let v = Vocabulary::new(" ab").unwrap();
        // frames: a a _ b ' ' ' ' b _
        let d = greedy_decode(&one_hot(&[2, 2, 0, 3, 1, 1, 3, 0], 4), &v);
        assert_eq!(d.transcript.to_string(), "ab b");
        assert_eq!(d.word_hyps.len(), 2);
        assert!((d.word_hyps[0].start - 0.0).abs() < 1e-12);
        assert!((d.word_hyps[0].duration - 0.04).abs() < 1e-12);
        assert!((d.word_hyps[1].start - 0.06).abs() < 1e-12);
        assert!((d.word_hyps[1].duration - 0.01).abs() < 1e-12);
        assert!(d.word_hyps.iter().all(|w| w.confidence > 0.9 && w.confidence <= 1.0));
    }

    #[test]
    fn empty_decode() {
        let v = Vocabulary::new(" ab").unwrap();
        let d = greedy_decode(&one_hot(&[0, 1, 1, 0], 4), &v);
        assert!(d.transcript.is_empty());
        assert!(d.word_hyps.is_empty());
        assert_eq!(d.char_alignment, vec![1]);
    }

    #[test]
    fn transcript_loss_uses_spaces() {
        let v = Vocabulary::new(" a").unwrap();
        let l = one_hot(&[1, 2, 1, 2, 1], 3);
        let loss = ctc_loss(&l, &"a a".parse().unwrap(), &v).unwrap();
        assert!(loss < 0.1);
        let l = LogitsSequence {
            values: Array2::zeros((2, 2)),
            frame_times: vec![0.0, 0.01],
            hop_secs: 0.01,
        };
        let loss = ctc_loss(&l, &"a".parse().unwrap(), &Vocabulary::new("a").unwrap()).unwrap();
        assert!((loss + 0.75f64.ln()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn decode_invariant_to_row_shifts(
            rows in proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, 4), 1..30),
            shifts in proptest::collection::vec(-100.0f64..100.0, 30),
        ) {
            let v = Vocabulary::new(" ab").unwrap();
            let t = rows.len();
            let values = Array2::from_shape_fn((t, 4), |(i, j)| rows[i][j]);
            let shifted = Array2::from_shape_fn((t, 4), |(i, j)| rows[i][j] + shifts[i]);
            let mk = |values| LogitsSequence {
                values,
                frame_times: (0..t).map(|i| i as f64 * 0.01).collect(),
                hop_secs: 0.01,
            };
            let a = greedy_decode(&mk(values), &v);
            let b = greedy_decode(&mk(shifted), &v);
            prop_assert_eq!(&a.transcript, &b.transcript);
            prop_assert_eq!(a.char_alignment, b.char_alignment);
            // word spans are ordered and disjoint
            for w in a.word_hyps.windows(2) {
                prop_assert!(w[0].end() <= w[1].start + 1e-12);
            }
            for w in &a.word_hyps {
                prop_assert!(w.end() <= t as f64 * 0.01 + 1e-12);
            }
        }
    }
}
