use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::Dialogue;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub frac_empty: f64,
    /// Non-empty turns identical to the turn before them.
    pub frac_repeat: f64,
    /// Distinct unigrams over all unigrams.
    pub distinct_1: f64,
    pub modal_response_share: f64,
}

impl DegeneracyReport {
    /// `frac_empty + frac_repeat + modal_response_share`.
    pub fn degeneracy(&self) -> f64 {
        self.frac_empty + self.frac_repeat + self.modal_response_share
    }
}

/// Counts over the generated turns of `dialogues`; the first generated turn
/// is compared against the last seed turn.
pub fn degeneracy_report(dialogues: &[Dialogue]) -> Result<DegeneracyReport> {
    let mut n = 0usize;
    let mut empty = 0usize;
    let mut repeat = 0usize;
    let mut tokens = 0usize;
    let mut types: HashSet<&str> = HashSet::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for d in dialogues {
        let mut prev = d.seed.last();
        for u in &d.generated {
            n += 1;
            if u.is_empty() {
                empty += 1;
            } else if prev.is_some_and(|p| p.tokens == u.tokens) {
                repeat += 1;
            }
            tokens += u.tokens.len();
            types.extend(u.tokens.iter().map(String::as_str));
            *counts.entry(u.tokens.join(" ")).or_default() += 1;
            prev = Some(u);
        }
    }
    if n == 0 {
        return Err(Error::NoData("no generated turns to inspect".into()));
    }
    let modal = counts.values().copied().max().unwrap_or(0);
    let nf = n as f64;
    Ok(DegeneracyReport {
        frac_empty: empty as f64 / nf,
        frac_repeat: repeat as f64 / nf,
        distinct_1: if tokens == 0 { 0.0 } else { types.len() as f64 / tokens as f64 },
        modal_response_share: modal as f64 / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialogue::{Speaker, System, Utterance};

    fn dlg(turns: &[&str]) -> Dialogue {
        Dialogue {
            dialogue_id: "d".into(),
            origin_system: System::Rl,
            seed: vec![Utterance::new(Speaker::A, "hello")],
            generated: turns.iter().map(|t| Utterance::new(Speaker::B, *t)).collect(),
        }
    }

    #[test]
    fn all_empty_and_all_repeating() {
        let r = degeneracy_report(&[dlg(&["", "", ""])]).unwrap();
        assert_eq!(r.frac_empty, 1.0);
        assert_eq!(r.distinct_1, 0.0);
        let r = degeneracy_report(&[dlg(&["hello", "hello", "hello"])]).unwrap();
        assert_eq!(r.frac_repeat, 1.0);
        assert_eq!(r.modal_response_share, 1.0);
        assert!(degeneracy_report(&[]).is_err());
    }
}
