//! CTM hypothesis files: `utt-id channel start duration word confidence`.

use std::fmt::Write as _;

use super::WordHypothesis;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CtmRecord {
    pub utt_id: String,
    pub channel: String,
    pub word: WordHypothesis,
}

pub fn write_ctm(records: &[CtmRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {:.3} {:.3} {} {:.3}",
            r.utt_id, r.channel, r.word.start, r.word.duration, r.word.word, r.word.confidence
        );
    }
    out
}

/// Parse CTM text. Blank lines and lines starting with `;;` are skipped.
pub fn parse_ctm(text: &str) -> Result<Vec<CtmRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let err = |detail: String| Error::Parse {
            context: format!("ctm line {}", lineno + 1),
            detail,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| err(format!("{name} {:?}: {e}", fields[i])))
        };
        let start = num(2, "start")?;
        let duration = num(3, "duration")?;
        let confidence = num(5, "confidence")?;
        let word = WordHypothesis::new(fields[4], start, duration, confidence)
            .map_err(|e| err(e.to_string()))?;
        out.push(CtmRecord {
            utt_id: fields[0].to_owned(),
            channel: fields[1].to_owned(),
            word,
        });
    }
    Ok(out)
}
