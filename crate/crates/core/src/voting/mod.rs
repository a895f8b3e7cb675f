//! Word error rate and the output-combination strategies used by the
//! smoothed recognizer: one-sentence, sentence-level majority vote, logits
//! averaging and ROVER word-transition-network voting.

mod ctm;
mod rover;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognizer::{greedy_decode, LogitsSequence, Vocabulary};

pub use ctm::{parse_ctm, write_ctm, CtmRecord};
pub use rover::{align_wtn, rover, Arc, RoverConfig, Slot, WordTransitionNetwork};

/// An ordered list of word tokens. Tokens are non-empty and contain no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Transcript {
    words: Vec<String>,
}

impl Transcript {
    pub fn new<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        for w in &words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::domain(format!("invalid word token {w:?}")));
            }
        }
        Ok(Self { words })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl FromStr for Transcript {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(Self {
            words: s.split_whitespace().map(str::to_owned).collect(),
        })
    }
}

impl TryFrom<String> for Transcript {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Transcript> for String {
    fn from(t: Transcript) -> String {
        t.to_string()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.words.join(" "))
    }
}

/// A decoded word with its position in the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordHypothesis {
    pub word: String,
    /// Seconds from the start of the utterance.
    pub start: f64,
    pub duration: f64,
    pub confidence: f64,
}

impl WordHypothesis {
    pub fn new(word: impl Into<String>, start: f64, duration: f64, confidence: f64) -> Result<Self> {
        let word = word.into();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::domain(format!("invalid word token {word:?}")));
        }
        if !(start >= 0.0) || !(duration > 0.0) {
            return Err(Error::domain(format!(
                "word {word:?} has invalid timing start={start} duration={duration}"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::domain(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            word,
            start,
            duration,
            confidence,
        })
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

pub fn transcript_of(hyps: &[WordHypothesis]) -> Transcript {
    Transcript {
        words: hyps.iter().map(|h| h.word.clone()).collect(),
    }
}

/// Word-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate of `hyp` against `reference`, capped at 1.
pub fn wer(hyp: &Transcript, reference: &Transcript) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::domain("WER needs a non-empty reference"));
    }
    let d = edit_distance(&hyp.words, &reference.words);
    Ok((d as f64 / reference.len() as f64).min(1.0))
}

/// Most frequent full sentence; ties go to the earliest first occurrence.
pub fn majority_vote(transcripts: &[Transcript]) -> Result<Transcript> {
    if transcripts.is_empty() {
        return Err(Error::domain("majority vote over an empty list"));
    }
    let mut counts: HashMap<&Transcript, (usize, usize)> = HashMap::new();
    for (i, t) in transcripts.iter().enumerate() {
        counts.entry(t).or_insert((0, i)).0 += 1;
    }
    let (best, _) = counts
        .into_iter()
        .max_by(|(_, (ca, fa)), (_, (cb, fb))| ca.cmp(cb).then(fb.cmp(fa)))
        .expect("non-empty");
    Ok(best.clone())
}

/// Greedy decode of the elementwise mean of equally shaped logit sequences.
pub fn average_logits(logits: &[LogitsSequence], vocab: &Vocabulary) -> Result<Transcript> {
    let first = logits
        .first()
        .ok_or_else(|| Error::domain("logit averaging over an empty list"))?;
    let shape = first.values.dim();
    let mut sum = first.values.clone();
    for l in &logits[1..] {
        if l.values.dim() != shape {
            return Err(Error::Shape(format!(
                "logit sequence of shape {:?} does not match {:?}",
                l.values.dim(),
                shape
            )));
        }
        sum += &l.values;
    }
    sum /= logits.len() as f64;
    let mean = LogitsSequence {
        values: sum,
        frame_times: first.frame_times.clone(),
        hop_secs: first.hop_secs,
    };
    Ok(greedy_decode(&mean, vocab).transcript)
}
