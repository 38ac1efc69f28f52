//! Hand-coded turn-quality rater and noisy simulated judges, standing in for
//! human annotators on the bundled corpus.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::service::{AnnotationService, NextTask, RatingInput, ServiceError};
use crate::corpus::dialogue::{Dialogue, Utterance};
use crate::corpus::minicorpus::topic_of;
use crate::corpus::tokenize::tokenize;

fn topics(tokens: &[String]) -> Vec<usize> {
    let mut t: Vec<usize> = tokens.iter().filter_map(|w| topic_of(w)).collect();
    t.sort_unstable();
    t.dedup();
    t
}

/// Quality in `[1, 5]` of turn `i` given the turns before it.
///
/// Empty turns and verbatim repeats of the previous turn score 1, repeats of
/// any earlier turn 1.5. Otherwise the score starts at 2 and rewards topical
/// content (more when it continues the previous turn's topic), answering a
/// question and moderate length, and penalizes very short or long turns and
/// stuttering.
pub fn rate_turn(turns: &[Vec<String>], i: usize) -> f64 {
    let cur = &turns[i];
    if cur.is_empty() {
        return 1.0;
    }
    if i > 0 && turns[i - 1] == *cur {
        return 1.0;
    }
    if turns[..i].iter().any(|t| t == cur) {
        return 1.5;
    }
    let mut s: f64 = 2.0;
    let mine = topics(cur);
    if !mine.is_empty() {
        s += 0.5;
        let prev = if i > 0 { topics(&turns[i - 1]) } else { Vec::new() };
        if mine.iter().any(|t| prev.contains(t)) {
            s += 1.0;
        } else if turns[..i].iter().any(|u| topics(u).iter().any(|t| mine.contains(t))) {
            s += 0.5;
        }
    }
    if i > 0 && turns[i - 1].last().is_some_and(|t| t == "?") && cur.last().is_none_or(|t| t != "?") {
        s += 0.5;
    }
    let n = cur.len();
    if (4..=14).contains(&n) {
        s += 0.5;
    }
    if !(3..=20).contains(&n) {
        s -= 0.5;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in cur {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    if counts.values().any(|&c| c >= 3) {
        s -= 1.0;
    }
    s.clamp(1.0, 5.0)
}

pub fn rate_dialogue_turn(d: &Dialogue, i: usize) -> f64 {
    let turns: Vec<Vec<String>> = d.turns().map(|u| u.tokens.clone()).collect();
    rate_turn(&turns, i)
}

/// Rating of `response` as the turn following `context`.
pub fn rate_response(context: &[Utterance], response: &Utterance) -> f64 {
    let mut turns: Vec<Vec<String>> = context.iter().map(|u| u.tokens.clone()).collect();
    turns.push(response.tokens.clone());
    rate_turn(&turns, context.len())
}

/// Mean synthetic rating over the generated turns of `dialogues`.
pub fn mean_generated_rating(dialogues: &[Dialogue]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in dialogues {
        for i in d.seed.len()..d.num_turns() {
            sum += rate_dialogue_turn(d, i);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimJudge {
    pub id: String,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SimJudge {
    /// The three default judges, increasingly noisy.
    pub fn panel(seed: u64) -> Vec<SimJudge> {
        [0.5, 0.7, 0.9]
            .iter()
            .enumerate()
            .map(|(k, &sd)| SimJudge {
                id: format!("sim-{}", k + 1),
                noise_sd: sd,
                seed: seed.wrapping_add(k as u64),
            })
            .collect()
    }

    /// Noisy integer rating, reproducible per (judge, dialogue, turn).
    pub fn rate(&self, true_rating: f64, dialogue_id: &str, turn_index: usize) -> u8 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.id.as_bytes());
        h.update([0]);
        h.update(dialogue_id.as_bytes());
        h.update(turn_index.to_le_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
        let noise = match Normal::new(0.0, self.noise_sd) {
            Ok(n) if self.noise_sd > 0.0 => n.sample(&mut rng),
            _ => 0.0,
        };
        (true_rating + noise).round().clamp(1.0, 5.0) as u8
    }
}

/// Lets the judges work through the service until every one is told there is
/// nothing left; returns the number of batches submitted.
pub fn simulate_annotation(svc: &AnnotationService, judges: &[SimJudge]) -> Result<usize, ServiceError> {
    let mut done = vec![false; judges.len()];
    let mut batches = 0;
    while done.iter().any(|d| !d) {
        for (k, j) in judges.iter().enumerate() {
            if done[k] {
                continue;
            }
            let task = match svc.assign_task(&j.id)? {
                NextTask::Done => {
                    done[k] = true;
                    continue;
                }
                NextTask::Task(t) => t,
            };
            let turns: Vec<Vec<String>> = task.turns.iter().map(|t| tokenize(&t.text)).collect();
            let ratings: Vec<RatingInput> = task
                .rate_turns
                .iter()
                .map(|&i| RatingInput {
                    dialogue_id: task.dialogue_id.clone(),
                    turn_index: i,
                    rating: j.rate(rate_turn(&turns, i), &task.dialogue_id, i) as i64,
                })
                .collect();
            svc.submit_ratings(&j.id, &ratings)?;
            batches += 1;
        }
    }
    Ok(batches)
}
