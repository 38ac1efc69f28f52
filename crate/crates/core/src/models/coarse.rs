//! Coarse token stream for MrRNN: utterances with high-frequency and
//! punctuation tokens removed.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::dialogue::{Dialogue, Utterance};
use crate::corpus::vocab::{Vocab, EOS};

pub const COARSE_EMPTY: &str = "<coarse_empty>";
pub const DEFAULT_STOPLIST_SIZE: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist {
    words: BTreeSet<String>,
}

fn is_punctuation(token: &str) -> bool {
    !token.chars().any(|c| c.is_alphanumeric())
}

impl Stoplist {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        Stoplist {
            words: words.iter().map(|w| w.as_ref().to_string()).collect(),
        }
    }

    /// The `k` most frequent tokens (ties lexicographic) plus every
    /// punctuation token seen in the corpus.
    pub fn build<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>, k: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for d in dialogues {
            for u in d.turns() {
                for t in &u.tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.iter().map(|(s, c)| (*s, *c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words: BTreeSet<String> = ranked.iter().take(k).map(|(s, _)| s.to_string()).collect();
        words.extend(counts.keys().filter(|s| is_punctuation(s)).map(|s| s.to_string()));
        Stoplist { words }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token) || is_punctuation(token)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Vocabulary ids of the stoplist words that the vocabulary knows.
    pub fn ids(&self, vocab: &Vocab) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .words
            .iter()
            .filter(|w| vocab.contains(w))
            .map(|w| vocab.id(w))
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Tokens of `u` not in the stoplist, or `[COARSE_EMPTY]` if none remain.
pub fn extract_coarse_sequence(u: &Utterance, stoplist: &Stoplist) -> Vec<String> {
    let kept: Vec<String> = u
        .tokens
        .iter()
        .filter(|t| !stoplist.contains(t))
        .cloned()
        .collect();
    if kept.is_empty() {
        vec![COARSE_EMPTY.to_string()]
    } else {
        kept
    }
}

/// Id-level coarse sequence: drops stoplisted ids (sorted) and keeps EOS.
/// An all-stopword turn becomes just `[EOS]`, the id form of the placeholder.
pub fn coarse_ids(ids: &[u32], stop_ids: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|i| *i != EOS && stop_ids.binary_search(i).is_err())
        .collect();
    out.push(EOS);
    out
}
