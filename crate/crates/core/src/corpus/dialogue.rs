use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

/// Which system produced a dialogue. Declaration order is the re-ranking
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum System {
    Seq2seq,
    Hred,
    Vhred,
    Mrrnn,
    De,
    Rerank,
    Rl,
    Human,
}

impl System {
    pub const GENERATIVE: [System; 5] = [
        System::Seq2seq,
        System::Hred,
        System::Vhred,
        System::Mrrnn,
        System::De,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Seq2seq => "SEQ2SEQ",
            System::Hred => "HRED",
            System::Vhred => "VHRED",
            System::Mrrnn => "MRRNN",
            System::De => "DE",
            System::Rerank => "RERANK",
            System::Rl => "RL",
            System::Human => "HUMAN",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            System::Seq2seq,
            System::Hred,
            System::Vhred,
            System::Mrrnn,
            System::De,
            System::Rerank,
            System::Rl,
            System::Human,
        ];
        all.into_iter()
            .find(|sys| sys.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown system '{s}'")))
    }
}

/// One turn. `tokens` is always `tokenize(raw_text)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: Speaker, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Utterance {
            speaker,
            raw_text,
            tokens,
        }
    }

    /// Builds a turn from already tokenized surfaces (generated output).
    pub fn from_tokens(speaker: Speaker, tokens: Vec<String>) -> Self {
        Utterance {
            speaker,
            raw_text: tokens.join(" "),
            tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub origin_system: System,
    /// Sampled context the conversation starts from.
    pub seed: Vec<Utterance>,
    /// Continuation produced by a dialogue system.
    pub generated: Vec<Utterance>,
}

impl Dialogue {
    pub fn turns(&self) -> impl Iterator<Item = &Utterance> {
        self.seed.iter().chain(self.generated.iter())
    }

    pub fn all_turns(&self) -> Vec<Utterance> {
        self.turns().cloned().collect()
    }

    pub fn num_turns(&self) -> usize {
        self.seed.len() + self.generated.len()
    }

    pub fn turn(&self, i: usize) -> Option<&Utterance> {
        if i < self.seed.len() {
            self.seed.get(i)
        } else {
            self.generated.get(i - self.seed.len())
        }
    }

    /// Speakers strictly alternate over seed ++ generated.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.num_turns() == 0 {
            return Err(format!("dialogue '{}' has no turns", self.dialogue_id));
        }
        let turns: Vec<_> = self.turns().collect();
        for (i, pair) in turns.windows(2).enumerate() {
            if pair[0].speaker == pair[1].speaker {
                return Err(format!(
                    "dialogue '{}': turns {} and {} are both spoken by {:?}",
                    self.dialogue_id,
                    i,
                    i + 1,
                    pair[0].speaker
                ));
            }
        }
        Ok(())
    }

    /// Seed text key; dialogues grown from the same seed share it.
    pub fn seed_key(&self) -> String {
        self.seed
            .iter()
            .map(|u| u.text())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueRecord {
    dialogue_id: String,
    origin_system: System,
    /// Absent when every turn belongs to the seed (corpus dialogues).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed_turns: Option<usize>,
    turns: Vec<TurnRecord>,
}

impl From<&Dialogue> for DialogueRecord {
    fn from(d: &Dialogue) -> Self {
        DialogueRecord {
            dialogue_id: d.dialogue_id.clone(),
            origin_system: d.origin_system,
            seed_turns: (!d.generated.is_empty()).then_some(d.seed.len()),
            turns: d
                .turns()
                .map(|u| TurnRecord {
                    speaker: u.speaker,
                    text: u.raw_text.clone(),
                })
                .collect(),
        }
    }
}

impl DialogueRecord {
    fn into_dialogue(self) -> std::result::Result<Dialogue, String> {
        let n_seed = self.seed_turns.unwrap_or(self.turns.len());
        if n_seed > self.turns.len() {
            return Err(format!(
                "seed_turns {} exceeds {} turns",
                n_seed,
                self.turns.len()
            ));
        }
        let mut utts: Vec<Utterance> = self
            .turns
            .into_iter()
            .map(|t| Utterance::new(t.speaker, t.text))
            .collect();
        let generated = utts.split_off(n_seed);
        Ok(Dialogue {
            dialogue_id: self.dialogue_id,
            origin_system: self.origin_system,
            seed: utts,
            generated,
        })
    }
}

/// Canonical one-line JSON form of a dialogue.
pub fn to_line(d: &Dialogue) -> String {
    serde_json::to_string(&DialogueRecord::from(d)).expect("dialogue record serializes")
}

/// Parses one record and checks speaker alternation.
pub fn from_line(line: &str, line_no: usize) -> Result<Dialogue> {
    let record: DialogueRecord = serde_json::from_str(line).map_err(|e| Error::Validation {
        line: line_no,
        message: format!("malformed dialogue record: {e}"),
    })?;
    let d = record.into_dialogue().map_err(|message| Error::Validation {
        line: line_no,
        message,
    })?;
    d.validate().map_err(|message| Error::Validation {
        line: line_no,
        message,
    })?;
    Ok(d)
}

/// Streams dialogues from a line-delimited reader, 1-based line numbers in
/// errors. Blank lines are skipped.
pub fn read_dialogues<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Dialogue>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Validation {
                line: i + 1,
                message: format!("unreadable line: {e}"),
            })),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(from_line(&l, i + 1)),
        })
}

pub fn load_dialogues(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dialogues(BufReader::new(file))
        .map(|r| {
            r.map_err(|e| match e {
                Error::Validation { line, message } => Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message,
                },
                other => other,
            })
        })
        .collect()
}

pub fn write_dialogues<'a>(
    path: impl AsRef<Path>,
    dialogues: impl IntoIterator<Item = &'a Dialogue>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        writeln!(w, "{}", to_line(d)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, speakers: &[&str]) -> String {
        let turns: Vec<String> = speakers
            .iter()
            .enumerate()
            .map(|(i, s)| format!(r#"{{"speaker":"{s}","text":"turn {i}"}}"#))
            .collect();
        format!(
            r#"{{"dialogue_id":"{id}","origin_system":"HUMAN","turns":[{}]}}"#,
            turns.join(",")
        )
    }

    #[test]
    fn alternation_violation_reports_its_line() {
        let text = [
            line("d1", &["A", "B"]),
            line("d2", &["B", "A", "B"]),
            line("d3", &["A", "A"]),
        ]
        .join("\n");
        let results: Vec<_> = read_dialogues(text.as_bytes()).collect();
        assert!(results[0].is_ok() && results[1].is_ok());
        match &results[2] {
            Err(Error::Validation { line, .. }) => assert_eq!(*line, 3),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_its_line() {
        let text = format!("{}\n{{not json", line("d1", &["A"]));
        let results: Vec<_> = read_dialogues(text.as_bytes()).collect();
        assert!(matches!(results[1], Err(Error::Validation { line: 2, .. })));
    }

    #[test]
    fn empty_input_yields_nothing() {
        assert_eq!(read_dialogues(&b""[..]).count(), 0);
    }

    #[test]
    fn seed_split_survives_serialization() {
        let d = Dialogue {
            dialogue_id: "x".into(),
            origin_system: System::Hred,
            seed: vec![Utterance::new(Speaker::A, "hi there")],
            generated: vec![
                Utterance::new(Speaker::B, "hello"),
                Utterance::new(Speaker::A, ""),
            ],
        };
        let l = to_line(&d);
        assert_eq!(
            l,
            r#"{"dialogue_id":"x","origin_system":"HRED","seed_turns":1,"turns":[{"speaker":"A","text":"hi there"},{"speaker":"B","text":"hello"},{"speaker":"A","text":""}]}"#
        );
        assert_eq!(from_line(&l, 1).unwrap(), d);
    }

    #[test]
    fn system_names_parse_case_insensitively() {
        assert_eq!("mrrnn".parse::<System>().unwrap(), System::Mrrnn);
        assert!("gpt".parse::<System>().is_err());
    }
}
