//! Line-delimited judge training data built from aggregated labels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AggregatedLabel;
use crate::corpus::dialogue::{Dialogue, Speaker, Utterance};
use crate::error::{Error, Result};

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatedRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    /// Preceding turns joined with `\n`.
    pub context_text: String,
    pub response_text: String,
    pub label: f64,
    pub confidence: f64,
    /// Negative example added by augmentation rather than rated.
    #[serde(default, skip_serializing_if = "is_false")]
    pub synthetic: bool,
}

impl AggregatedRecord {
    /// Context turns, with speakers alternating so the last one is A.
    pub fn context(&self) -> Vec<Utterance> {
        let lines: Vec<&str> = self.context_text.split('\n').collect();
        let n = lines.len();
        lines
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let sp = if (n - 1 - i) % 2 == 0 { Speaker::A } else { Speaker::B };
                Utterance::new(sp, t)
            })
            .collect()
    }

    pub fn response(&self) -> Utterance {
        Utterance::new(Speaker::B, self.response_text.as_str())
    }
}

pub fn join_context<'a>(turns: impl IntoIterator<Item = &'a Utterance>) -> String {
    turns.into_iter().map(Utterance::text).collect::<Vec<_>>().join("\n")
}

/// One record per label; the label's dialogue and turn must exist and the
/// turn must have at least one preceding turn.
pub fn build_dataset(dialogues: &[Dialogue], labels: &[AggregatedLabel]) -> Result<Vec<AggregatedRecord>> {
    let by_id: HashMap<&str, &Dialogue> = dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
    labels
        .iter()
        .map(|l| {
            let d = by_id.get(l.dialogue_id.as_str()).ok_or_else(|| {
                Error::Annotation(format!("label for unknown dialogue '{}'", l.dialogue_id))
            })?;
            let turns = d.all_turns();
            if l.turn_index == 0 || l.turn_index >= turns.len() {
                return Err(Error::Annotation(format!(
                    "turn {} of '{}' has no context or does not exist",
                    l.turn_index, l.dialogue_id
                )));
            }
            Ok(AggregatedRecord {
                dialogue_id: l.dialogue_id.clone(),
                turn_index: l.turn_index,
                context_text: join_context(&turns[..l.turn_index]),
                response_text: turns[l.turn_index].text(),
                label: l.label as f64,
                confidence: l.confidence,
                synthetic: false,
            })
        })
        .collect()
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[AggregatedRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AggregatedRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: AggregatedRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(1.0..=5.0).contains(&r.label) {
            return Err(parse_err(format!("label {} outside [1, 5]", r.label)));
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialogue::System;

    #[test]
    fn records_carry_context_and_response() {
        let d = Dialogue {
            dialogue_id: "x".into(),
            origin_system: System::Hred,
            seed: vec![Utterance::new(Speaker::A, "hi there")],
            generated: vec![Utterance::new(Speaker::B, ""), Utterance::new(Speaker::A, "ok")],
        };
        let labels = vec![AggregatedLabel {
            dialogue_id: "x".into(),
            turn_index: 2,
            label: 4,
            confidence: 0.8,
        }];
        let recs = build_dataset(&[d], &labels).unwrap();
        assert_eq!(recs[0].context_text, "hi there\n");
        assert_eq!(recs[0].response_text, "ok");
        let ctx = recs[0].context();
        assert_eq!(ctx.len(), 2);
        assert!(ctx[1].is_empty());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agg.jsonl");
        write_dataset(&p, &recs).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), recs);
    }
}
