//! Rating persistence: one JSON document replaced atomically on every
//! commit, plus an append-only JSONL audit log beside it.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TurnRating;
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct RatingStore {
    path: Option<PathBuf>,
    ratings: Vec<TurnRating>,
    keys: HashSet<(String, usize, String)>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    ratings: Vec<TurnRating>,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    event: &'a str,
    judge_id: &'a str,
    dialogue_id: &'a str,
    count: usize,
    timestamp: u64,
}

fn key(r: &TurnRating) -> (String, usize, String) {
    (r.dialogue_id.clone(), r.turn_index, r.judge_id.clone())
}

impl RatingStore {
    /// Store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let ratings = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str::<Document>(&text)?.ratings
        } else {
            Vec::new()
        };
        let mut store = RatingStore {
            path: Some(path),
            ratings: Vec::new(),
            keys: HashSet::new(),
        };
        for r in ratings {
            if !store.keys.insert(key(&r)) {
                return Err(Error::Annotation(format!(
                    "store holds a duplicate rating for {}#{} by {}",
                    r.dialogue_id, r.turn_index, r.judge_id
                )));
            }
            store.ratings.push(r);
        }
        Ok(store)
    }

    pub fn audit_path(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".audit.jsonl");
            PathBuf::from(s)
        })
    }

    pub fn ratings(&self) -> &[TurnRating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn contains(&self, dialogue_id: &str, turn_index: usize, judge_id: &str) -> bool {
        self.keys
            .contains(&(dialogue_id.to_string(), turn_index, judge_id.to_string()))
    }

    /// Adds a batch all-or-nothing. In-memory state changes only once the
    /// file has been replaced.
    pub fn commit(&mut self, batch: Vec<TurnRating>) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &batch {
            let k = key(r);
            if self.keys.contains(&k) || !seen.insert(k) {
                return Err(Error::Annotation(format!(
                    "duplicate rating for {}#{} by {}",
                    r.dialogue_id, r.turn_index, r.judge_id
                )));
            }
        }
        if let Some(path) = &self.path {
            let mut all = self.ratings.clone();
            all.extend(batch.iter().cloned());
            write_atomic(path, &serde_json::to_vec_pretty(&Document { ratings: all })?)?;
            if let (Some(audit), Some(first)) = (self.audit_path(), batch.first()) {
                let entry = AuditEntry {
                    event: "submit",
                    judge_id: &first.judge_id,
                    dialogue_id: &first.dialogue_id,
                    count: batch.len(),
                    timestamp: first.timestamp,
                };
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&audit)
                    .map_err(|e| Error::io(&audit, e))?;
                writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&audit, e))?;
            }
        }
        for r in batch {
            self.keys.insert(key(&r));
            self.ratings.push(r);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        ratings_to_csv(&self.ratings)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.to_path_buf().into_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// CSV with columns `dialogue_id,turn_index,judge_id,rating,timestamp`.
pub fn ratings_to_csv(ratings: &[TurnRating]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in ratings {
        w.serialize(r)
            .map_err(|e| Error::Annotation(format!("csv export: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Annotation(format!("csv export: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn ratings_from_csv(text: &str) -> Result<Vec<TurnRating>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Validation {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
