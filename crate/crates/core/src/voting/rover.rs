//! ROVER: iterative word-transition-network alignment and per-slot frequency vote.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{Transcript, WordHypothesis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoverConfig {
    /// Weight of the time-mismatch term added to a substitution.
    pub time_penalty: f64,
    pub max_hypotheses: usize,
}

impl Default for RoverConfig {
    fn default() -> Self {
        Self {
            time_penalty: 0.5,
            max_hypotheses: 50,
        }
    }
}

/// One hypothesis' contribution to a slot: a word with its timing, or NULL.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub word: Option<String>,
    pub start: f64,
    pub duration: f64,
    pub confidence: f64,
}

impl Arc {
    fn null() -> Self {
        Self {
            word: None,
            start: 0.0,
            duration: 0.0,
            confidence: 0.0,
        }
    }

    fn from_hyp(h: &WordHypothesis) -> Self {
        Self {
            word: Some(h.word.clone()),
            start: h.start,
            duration: h.duration,
            confidence: h.confidence,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Slot {
    /// Every merged hypothesis has exactly one arc here.
    pub arcs: Vec<Arc>,
}

impl Slot {
    /// `(candidate, count, summed confidence)` sorted by the vote order.
    pub fn tally(&self) -> Vec<(Option<String>, usize, f64)> {
        let mut out: Vec<(Option<String>, usize, f64)> = Vec::new();
        for arc in &self.arcs {
            match out.iter_mut().find(|(w, _, _)| *w == arc.word) {
                Some(entry) => {
                    entry.1 += 1;
                    entry.2 += arc.confidence;
                }
                None => out.push((arc.word.clone(), 1, arc.confidence)),
            }
        }
        out.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
                .then(match (&a.0, &b.0) {
                    (Some(x), Some(y)) => x.cmp(y),
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => Ordering::Equal,
                })
        });
        out
    }

    pub fn winner(&self) -> Option<String> {
        self.tally().into_iter().next().and_then(|(w, _, _)| w)
    }

    /// Span covered by the slot's word arcs.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        self.arcs
            .iter()
            .filter(|a| a.word.is_some())
            .fold(None, |acc, a| match acc {
                None => Some((a.start, a.start + a.duration)),
                Some((s, e)) => Some((s.min(a.start), e.max(a.start + a.duration))),
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordTransitionNetwork {
    pub slots: Vec<Slot>,
    /// Number of hypotheses merged so far.
    pub merged: usize,
}

impl WordTransitionNetwork {
    pub fn from_hypothesis(hyp: &[WordHypothesis]) -> Self {
        Self {
            slots: hyp
                .iter()
                .map(|h| Slot {
                    arcs: vec![Arc::from_hyp(h)],
                })
                .collect(),
            merged: 1,
        }
    }

    pub fn best_path(&self) -> Transcript {
        let words: Vec<String> = self.slots.iter().filter_map(Slot::winner).collect();
        Transcript::new(words).expect("slot words are validated hypotheses")
    }
}

fn overlap_ratio(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    let inter = (a_end.min(b_end) - a_start.max(b_start)).max(0.0);
    let union = a_end.max(b_end) - a_start.min(b_start);
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn substitution_cost(slot: &Slot, word: &WordHypothesis, cfg: &RoverConfig) -> f64 {
    let mut best = f64::INFINITY;
    for arc in &slot.arcs {
        let Some(w) = &arc.word else { continue };
        if *w == word.word {
            return 0.0;
        }
        let ov = overlap_ratio(arc.start, arc.start + arc.duration, word.start, word.end());
        best = best.min(1.0 + cfg.time_penalty * (1.0 - ov));
    }
    if best.is_finite() {
        best
    } else {
        1.0 + cfg.time_penalty
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Step {
    Align,
    /// Slot gets a NULL arc from the incoming hypothesis.
    Delete,
    /// Word opens a new slot holding NULL arcs for earlier hypotheses.
    Insert,
}

/// Merge one hypothesis into the network by minimum-cost alignment.
///
/// Costs: match 0, substitution `1 + time_penalty·(1 − overlap)`, insertion
/// and deletion 1. Ties prefer alignment, then deletion, then insertion.
pub fn align_wtn(
    wtn: &WordTransitionNetwork,
    hyp: &[WordHypothesis],
    cfg: &RoverConfig,
) -> WordTransitionNetwork {
    let k = wtn.slots.len();
    let m = hyp.len();
    let mut cost = vec![vec![0.0f64; m + 1]; k + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i as f64;
    }
    for j in 0..=m {
        cost[0][j] = j as f64;
    }
    for i in 1..=k {
        for j in 1..=m {
            let align = cost[i - 1][j - 1] + substitution_cost(&wtn.slots[i - 1], &hyp[j - 1], cfg);
            let delete = cost[i - 1][j] + 1.0;
            let insert = cost[i][j - 1] + 1.0;
            cost[i][j] = align.min(delete).min(insert);
        }
    }

    let mut steps = Vec::with_capacity(k + m);
    let (mut i, mut j) = (k, m);
    while i > 0 || j > 0 {
        let here = cost[i][j];
        let step = if i > 0
            && j > 0
            && here == cost[i - 1][j - 1] + substitution_cost(&wtn.slots[i - 1], &hyp[j - 1], cfg)
        {
            Step::Align
        } else if i > 0 && (j == 0 || here == cost[i - 1][j] + 1.0) {
            Step::Delete
        } else {
            Step::Insert
        };
        match step {
            Step::Align => {
                i -= 1;
                j -= 1;
            }
            Step::Delete => i -= 1,
            Step::Insert => j -= 1,
        }
        steps.push(step);
    }
    steps.reverse();

    let mut slots = Vec::with_capacity(k + m);
    let (mut i, mut j) = (0, 0);
    for step in steps {
        match step {
            Step::Align => {
                let mut slot = wtn.slots[i].clone();
                slot.arcs.push(Arc::from_hyp(&hyp[j]));
                slots.push(slot);
                i += 1;
                j += 1;
            }
            Step::Delete => {
                let mut slot = wtn.slots[i].clone();
                slot.arcs.push(Arc::null());
                slots.push(slot);
                i += 1;
            }
            Step::Insert => {
                let mut arcs = vec![Arc::null(); wtn.merged];
                arcs.push(Arc::from_hyp(&hyp[j]));
                slots.push(Slot { arcs });
                j += 1;
            }
        }
    }
    WordTransitionNetwork {
        slots,
        merged: wtn.merged + 1,
    }
}

/// Vote over hypotheses: the first seeds the network, the rest are merged in
/// order, and each slot emits its most frequent candidate (NULL emits nothing).
pub fn rover(hyps: &[Vec<WordHypothesis>], cfg: &RoverConfig) -> Result<Transcript> {
    Ok(build_wtn(hyps, cfg)?.best_path())
}

pub(crate) fn build_wtn(
    hyps: &[Vec<WordHypothesis>],
    cfg: &RoverConfig,
) -> Result<WordTransitionNetwork> {
    let (first, rest) = hyps
        .split_first()
        .ok_or_else(|| Error::domain("ROVER needs at least one hypothesis"))?;
    if hyps.len() > cfg.max_hypotheses {
        return Err(Error::domain(format!(
            "ROVER is limited to {} hypotheses, got {}",
            cfg.max_hypotheses,
            hyps.len()
        )));
    }
    let mut wtn = WordTransitionNetwork::from_hypothesis(first);
    for h in rest {
        wtn = align_wtn(&wtn, h, cfg);
    }
    Ok(wtn)
}
