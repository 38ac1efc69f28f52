use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AggregatedLabel, JudgeProfile, TurnRating, NUM_LABELS};
use crate::stats;

/// Minimum shared items for a judge pair to count.
pub const MIN_SHARED_ITEMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Absent when no judge pair shares enough items.
    pub median_pairwise_spearman: Option<f64>,
    pub pairs_compared: usize,
    pub label_histogram: [f64; NUM_LABELS],
    /// Mean judge competence.
    pub mean_judge_confidence: f64,
    /// Mean posterior mass of the chosen labels, the alternative reading of
    /// annotator confidence.
    pub mean_label_confidence: f64,
}

/// Median Spearman correlation over judge pairs sharing at least three
/// items (pairs where either side is constant are skipped).
pub fn median_pairwise_spearman(ratings: &[TurnRating]) -> (Option<f64>, usize) {
    let mut by_judge: BTreeMap<&str, BTreeMap<(&str, usize), f64>> = BTreeMap::new();
    for r in ratings {
        by_judge
            .entry(r.judge_id.as_str())
            .or_default()
            .insert((r.dialogue_id.as_str(), r.turn_index), r.rating as f64);
    }
    let judges: Vec<_> = by_judge.iter().collect();
    let mut rhos = Vec::new();
    for (i, (_, a)) in judges.iter().enumerate() {
        for (_, b) in &judges[i + 1..] {
            let (xs, ys): (Vec<f64>, Vec<f64>) = a
                .iter()
                .filter_map(|(k, x)| b.get(k).map(|y| (*x, *y)))
                .unzip();
            if xs.len() < MIN_SHARED_ITEMS {
                continue;
            }
            if let Some(rho) = stats::spearman(&xs, &ys) {
                rhos.push(rho);
            }
        }
    }
    let n = rhos.len();
    (stats::median(&rhos), n)
}

pub fn agreement_report(
    ratings: &[TurnRating],
    labels: &[AggregatedLabel],
    profiles: &[JudgeProfile],
) -> AgreementReport {
    let (median, pairs) = median_pairwise_spearman(ratings);
    let mut hist = [0.0; NUM_LABELS];
    for l in labels {
        hist[(l.label - 1) as usize] += 1.0;
    }
    if !labels.is_empty() {
        for h in hist.iter_mut() {
            *h /= labels.len() as f64;
        }
    }
    let mean_or_zero = |xs: Vec<f64>| stats::mean(&xs).unwrap_or(0.0);
    AgreementReport {
        median_pairwise_spearman: median,
        pairs_compared: pairs,
        label_histogram: hist,
        mean_judge_confidence: mean_or_zero(profiles.iter().map(|p| p.competence).collect()),
        mean_label_confidence: mean_or_zero(labels.iter().map(|l| l.confidence).collect()),
    }
}
