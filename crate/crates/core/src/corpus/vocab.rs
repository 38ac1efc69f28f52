use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dialogue::{Dialogue, Utterance};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Capped token inventory. Ids `0..4` are PAD, UNK, SOS, EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    surfaces: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    surfaces: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_surfaces(r.surfaces)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            surfaces: v.surfaces,
        }
    }
}

/// Out-of-vocabulary statistics of a corpus under a vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnkStats {
    pub total_tokens: usize,
    pub oov_tokens: usize,
    pub unk_rate: f64,
}

impl Vocab {
    /// `surfaces` must start with the four reserved symbols.
    pub fn from_surfaces(surfaces: Vec<String>) -> Self {
        assert!(
            surfaces.len() >= NUM_RESERVED
                && surfaces.iter().zip(RESERVED).all(|(s, r)| s == r),
            "vocabulary must start with the reserved symbols"
        );
        let index = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocab { surfaces, index }
    }

    /// Vocabulary over an explicit word list (reserved symbols prepended).
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut surfaces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        surfaces.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_surfaces(surfaces)
    }

    /// Reserved symbols plus the `cap - 4` most frequent surfaces; frequency
    /// ties go to the lexicographically smaller surface.
    pub fn build<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>, cap: usize) -> Result<Self> {
        if cap < NUM_RESERVED + 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary cap must be at least {}, got {cap}",
                NUM_RESERVED + 1
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any = false;
        for d in dialogues {
            any = true;
            for u in d.turns() {
                for t in &u.tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(Error::NoData("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(s, _)| !RESERVED.contains(s))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words: Vec<&str> = ranked
            .into_iter()
            .take(cap - NUM_RESERVED)
            .map(|(s, _)| s)
            .collect();
        Ok(Self::from_words(&words))
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn surface(&self, id: u32) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Token ids of an utterance: at most `max_len - 1` tokens, then EOS.
    pub fn encode(&self, u: &Utterance, max_len: usize) -> Vec<u32> {
        self.encode_tokens(&u.tokens, max_len)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<u32> {
        let keep = max_len.saturating_sub(1);
        let mut ids: Vec<u32> = tokens.iter().take(keep).map(|t| self.id(t.as_ref())).collect();
        ids.push(EOS);
        ids
    }

    /// Surfaces of `ids`, stopping at EOS and skipping other reserved ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i as usize >= NUM_RESERVED)
            .map(|&i| self.surfaces[i as usize].clone())
            .collect()
    }

    pub fn unk_stats<'a>(&self, dialogues: impl IntoIterator<Item = &'a Dialogue>) -> UnkStats {
        let (mut total, mut oov) = (0usize, 0usize);
        for d in dialogues {
            for u in d.turns() {
                for t in &u.tokens {
                    total += 1;
                    if !self.contains(t) {
                        oov += 1;
                    }
                }
            }
        }
        UnkStats {
            total_tokens: total,
            oov_tokens: oov,
            unk_rate: if total == 0 {
                0.0
            } else {
                oov as f64 / total as f64
            },
        }
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.surfaces {
            h.update(s.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialogue::{Speaker, System};

    fn corpus(texts: &[&str]) -> Vec<Dialogue> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Dialogue {
                dialogue_id: format!("d{i}"),
                origin_system: System::Human,
                seed: vec![Utterance::new(Speaker::A, *t)],
                generated: vec![],
            })
            .collect()
    }

    #[test]
    fn small_corpus_keeps_everything() {
        let v = Vocab::build(&corpus(&["a b"]), 10).unwrap();
        assert_eq!(v.surfaces(), ["<pad>", "<unk>", "<sos>", "<eos>", "a", "b"]);
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let v = Vocab::build(&corpus(&["y x z y x", "x y y x", "x y"]), 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.surface(4), "x");
        assert_eq!(v.id("y"), UNK);
    }

    #[test]
    fn large_corpus_is_capped_exactly() {
        let words: Vec<String> = (0..30_000).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = Vocab::build(&corpus(&[&text]), 20_000).unwrap();
        assert_eq!(v.len(), 20_000);
    }

    #[test]
    fn empty_corpus_and_tiny_cap_are_errors() {
        assert!(matches!(Vocab::build(&[], 10), Err(Error::NoData(_))));
        assert!(Vocab::build(&corpus(&["a"]), 4).is_err());
    }

    #[test]
    fn unk_rate_counts_out_of_vocabulary_occurrences() {
        let c = corpus(&["a a a b c"]);
        let v = Vocab::build(&c, 5).unwrap();
        let s = v.unk_stats(&c);
        assert_eq!((s.total_tokens, s.oov_tokens), (5, 2));
        assert!((s.unk_rate - 0.4).abs() < 1e-12);
    }

    #[test]
    fn encoding_truncates_before_eos() {
        let v = Vocab::from_words(&["a", "b"]);
        let u = Utterance::new(Speaker::A, "a b a b q");
        assert_eq!(v.encode(&u, 3), vec![4, 5, EOS]);
        assert_eq!(v.encode(&u, 30), vec![4, 5, 4, 5, UNK, EOS]);
        assert_eq!(v.decode(&[4, UNK, 5, EOS, 4]), vec!["a", "b"]);
    }
}
