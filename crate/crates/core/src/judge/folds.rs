use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::{Dialogue, System};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitMode {
    /// Every continuation of the same seed context lands in one fold.
    ConvoSplit,
    /// One fold per producing system.
    SystemSplit,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::ConvoSplit => "CONVO_SPLIT",
            SplitMode::SystemSplit => "SYSTEM_SPLIT",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "convo" | "convo_split" => Ok(SplitMode::ConvoSplit),
            "system" | "system_split" => Ok(SplitMode::SystemSplit),
            _ => Err(Error::InvalidArgument(format!("unknown split mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub mode: SplitMode,
    /// Sorted dialogue ids per fold.
    pub folds: Vec<Vec<String>>,
    /// Producing system per fold for system splits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fold_systems: Vec<System>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self) -> HashMap<&str, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(k, ids)| ids.iter().map(move |id| (id.as_str(), k)))
            .collect()
    }
}

/// Partitions dialogues into `k` folds. Convo splits shuffle the seed groups
/// and deal them round-robin, so fold sizes differ by at most one group;
/// system splits need `k` equal to the number of systems present.
pub fn make_folds(dialogues: &[Dialogue], mode: SplitMode, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument("cross-validation needs k >= 2".into()));
    }
    let mut seen = BTreeSet::new();
    for d in dialogues {
        if !seen.insert(d.dialogue_id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate dialogue id '{}'", d.dialogue_id)));
        }
    }
    match mode {
        SplitMode::ConvoSplit => {
            let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for d in dialogues {
                groups.entry(d.seed_key()).or_default().push(d.dialogue_id.clone());
            }
            if groups.len() < k {
                return Err(Error::InvalidArgument(format!(
                    "{} seed contexts cannot fill {k} folds",
                    groups.len()
                )));
            }
            let mut groups: Vec<Vec<String>> = groups.into_values().collect();
            groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut folds = vec![Vec::new(); k];
            for (i, g) in groups.into_iter().enumerate() {
                folds[i % k].extend(g);
            }
            for f in &mut folds {
                f.sort();
            }
            Ok(FoldPlan {
                mode,
                folds,
                fold_systems: Vec::new(),
            })
        }
        SplitMode::SystemSplit => {
            let mut by_sys: BTreeMap<System, Vec<String>> = BTreeMap::new();
            for d in dialogues {
                by_sys.entry(d.origin_system).or_default().push(d.dialogue_id.clone());
            }
            if by_sys.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "system split over {} systems cannot make {k} folds",
                    by_sys.len()
                )));
            }
            let (fold_systems, mut folds): (Vec<System>, Vec<Vec<String>>) = by_sys.into_iter().unzip();
            for f in &mut folds {
                f.sort();
            }
            Ok(FoldPlan {
                mode,
                folds,
                fold_systems,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialogue::{Speaker, Utterance};

    fn d(id: &str, sys: System, seed: &str) -> Dialogue {
        Dialogue {
            dialogue_id: id.into(),
            origin_system: sys,
            seed: vec![Utterance::new(Speaker::A, seed)],
            generated: vec![Utterance::new(Speaker::B, "ok")],
        }
    }

    #[test]
    fn shared_seeds_stay_together() {
        let ds = vec![
            d("h1", System::Hred, "a"),
            d("v1", System::Vhred, "a"),
            d("h2", System::Hred, "b"),
            d("v2", System::Vhred, "b"),
            d("h3", System::Hred, "c"),
        ];
        let plan = make_folds(&ds, SplitMode::ConvoSplit, 2, 1).unwrap();
        let f = plan.fold_of();
        assert_eq!(f["h1"], f["v1"]);
        assert_eq!(f["h2"], f["v2"]);
        assert_eq!(f.len(), 5);
        assert!(make_folds(&ds, SplitMode::ConvoSplit, 4, 1).is_err());
    }

    #[test]
    fn system_split_needs_matching_k() {
        let ds = vec![d("h1", System::Hred, "a"), d("v1", System::Vhred, "a")];
        let plan = make_folds(&ds, SplitMode::SystemSplit, 2, 0).unwrap();
        assert_eq!(plan.fold_systems, vec![System::Hred, System::Vhred]);
        assert!(make_folds(&ds, SplitMode::SystemSplit, 3, 0).is_err());
        assert_eq!("convo".parse::<SplitMode>().unwrap(), SplitMode::ConvoSplit);
    }
}
