use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::dataset::AggregatedRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NegativeKind {
    Empty,
    /// Repeats the last context turn.
    RepeatPrev,
    /// A response drawn from another rated record.
    RandomUtt,
    /// The most frequent response in the data.
    Universal,
}

impl fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeKind::Empty => "EMPTY",
            NegativeKind::RepeatPrev => "REPEAT_PREV",
            NegativeKind::RandomUtt => "RANDOM_UTT",
            NegativeKind::Universal => "UNIVERSAL",
        })
    }
}

impl FromStr for NegativeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EMPTY" => Ok(NegativeKind::Empty),
            "REPEAT_PREV" => Ok(NegativeKind::RepeatPrev),
            "RANDOM_UTT" => Ok(NegativeKind::RandomUtt),
            "UNIVERSAL" => Ok(NegativeKind::Universal),
            _ => Err(Error::InvalidArgument(format!("unknown negative kind '{s}'"))),
        }
    }
}

/// Adds `per_context` label-1 negatives after every rated record, cycling
/// through `kinds`. Negatives keep their source's dialogue id and turn so
/// they fall in the same cross-validation fold.
pub fn augment_negatives(
    records: &[AggregatedRecord],
    kinds: &[NegativeKind],
    per_context: usize,
    seed: u64,
) -> Result<Vec<AggregatedRecord>> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no negative kinds given".into()));
    }
    if per_context == 0 {
        return Err(Error::InvalidArgument("per_context must be at least 1".into()));
    }
    let rated: Vec<&AggregatedRecord> = records.iter().filter(|r| !r.synthetic).collect();
    if rated.is_empty() {
        return Err(Error::NoData("no rated records to augment".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &rated {
        *counts.entry(r.response_text.as_str()).or_default() += 1;
    }
    let universal = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| t.to_string())
        .expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len() * (1 + per_context));
    for r in records {
        out.push(r.clone());
        if r.synthetic {
            continue;
        }
        for k in 0..per_context {
            let response_text = match kinds[k % kinds.len()] {
                NegativeKind::Empty => String::new(),
                NegativeKind::RepeatPrev => r.context_text.rsplit('\n').next().unwrap_or("").to_string(),
                NegativeKind::RandomUtt => {
                    let mut pick = rated[rng.random_range(0..rated.len())];
                    for _ in 0..8 {
                        if pick.response_text != r.response_text {
                            break;
                        }
                        pick = rated[rng.random_range(0..rated.len())];
                    }
                    pick.response_text.clone()
                }
                NegativeKind::Universal => universal.clone(),
            };
            out.push(AggregatedRecord {
                dialogue_id: r.dialogue_id.clone(),
                turn_index: r.turn_index,
                context_text: r.context_text.clone(),
                response_text,
                label: 1.0,
                confidence: 1.0,
                synthetic: true,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, ctx: &str, resp: &str) -> AggregatedRecord {
        AggregatedRecord {
            dialogue_id: id.into(),
            turn_index: 1,
            context_text: ctx.into(),
            response_text: resp.into(),
            label: 4.0,
            confidence: 0.9,
            synthetic: false,
        }
    }

    #[test]
    fn negatives_follow_their_source() {
        let recs = vec![rec("a", "x\nhow are you ?", "fine"), rec("b", "y", "fine"), rec("c", "z", "bad")];
        let kinds = [NegativeKind::Empty, NegativeKind::RepeatPrev, NegativeKind::Universal];
        let out = augment_negatives(&recs, &kinds, 3, 0).unwrap();
        assert_eq!(out.len(), 12);
        assert_eq!(out[1].response_text, "");
        assert_eq!(out[2].response_text, "how are you ?");
        assert_eq!(out[3].response_text, "fine");
        assert!(out[1..4].iter().all(|r| r.synthetic && r.label == 1.0 && r.dialogue_id == "a"));
        assert!("bogus".parse::<NegativeKind>().is_err());
        assert!(augment_negatives(&recs, &[], 1, 0).is_err());
    }
}
