use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::{Dialogue, System, Utterance};
use crate::error::{Error, Result};
use crate::judge::{JudgeEncoder, JudgeModel};
use crate::models::generate::{generate_response, DecodeMode};
use crate::models::{Architecture, ModelParams};
use crate::scalar::Scalar;
use crate::selftalk::CandidatePool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub origin_system: System,
    pub response: Utterance,
    pub judge_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub context: Vec<Utterance>,
    pub candidates: Vec<Candidate>,
    /// Systems whose generation failed, with the reason.
    pub failures: Vec<(System, String)>,
}

impl CandidateSet {
    /// Index of the highest-scoring candidate; equal scores go to the
    /// system declared first.
    pub fn select(&self) -> Result<usize> {
        select_best(&self.candidates)
    }
}

pub fn select_best(candidates: &[Candidate]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoData("no candidates to select from".into()));
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        if c.judge_score > b.judge_score || (c.judge_score == b.judge_score && c.origin_system < b.origin_system) {
            best = i;
        }
    }
    Ok(best)
}

/// One system taking part in re-ranking. Dual encoders need a pool.
pub struct RerankSystem<'a, T> {
    pub params: &'a ModelParams<T>,
    pub pool: Option<&'a CandidatePool>,
}

/// Every system proposes a response to `context`; the judge picks one.
pub fn rerank<T: Scalar>(
    context: &[Utterance],
    context_id: &str,
    systems: &[RerankSystem<'_, T>],
    judge: &JudgeModel<T>,
    encoder: &mut JudgeEncoder<T>,
    mode: DecodeMode,
    seed: u64,
) -> Result<(Utterance, CandidateSet)> {
    if judge.encoder.hash != encoder.hash() {
        return Err(Error::HashMismatch {
            expected: judge.encoder.hash.clone(),
            found: encoder.hash(),
        });
    }
    let speaker = context.last().map_or(crate::corpus::dialogue::Speaker::A, |u| u.speaker.other());
    let mut set = CandidateSet {
        context: context.to_vec(),
        candidates: Vec::with_capacity(systems.len()),
        failures: Vec::new(),
    };
    for (k, s) in systems.iter().enumerate() {
        let system = s.params.architecture.system();
        let attempt = (|| -> Result<Utterance> {
            if s.params.vocab_hash != encoder.vocab.hash() {
                return Err(Error::HashMismatch {
                    expected: encoder.vocab.hash(),
                    found: s.params.vocab_hash.clone(),
                });
            }
            let max_len = s.params.config.max_utterance_len;
            let history: Vec<Vec<u32>> = context.iter().map(|u| encoder.vocab.encode(u, max_len)).collect();
            let seed_k = seed.wrapping_add(k as u64);
            let pool = match (s.params.architecture, s.pool) {
                (Architecture::De, Some(p)) => Some(p.draw(context_id, &mut ChaCha8Rng::seed_from_u64(seed_k))),
                _ => None,
            };
            let ids = generate_response(s.params, &history, mode, seed_k, pool.as_deref())?;
            Ok(Utterance::from_tokens(speaker, encoder.vocab.decode(&ids)))
        })();
        match attempt {
            Ok(response) => {
                let (c, r) = encoder.encode(context, &response)?;
                let judge_score = judge.score_encoded(&c, &r)?.as_f64();
                set.candidates.push(Candidate {
                    origin_system: system,
                    response,
                    judge_score,
                });
            }
            Err(e) => set.failures.push((system, e.to_string())),
        }
    }
    if set.candidates.is_empty() {
        return Err(Error::NoData(format!("every system failed on context '{context_id}'")));
    }
    let best = set.select()?;
    Ok((set.candidates[best].response.clone(), set))
}

/// Self-talk in which every turn is chosen by re-ranking.
pub fn rerank_dialogue<T: Scalar>(
    seed: &Dialogue,
    systems: &[RerankSystem<'_, T>],
    judge: &JudgeModel<T>,
    encoder: &mut JudgeEncoder<T>,
    turns: usize,
    mode: DecodeMode,
    rng_seed: u64,
) -> Result<Dialogue> {
    let mut history: Vec<Utterance> = seed.turns().cloned().collect();
    let mut generated = Vec::with_capacity(turns);
    for t in 0..turns {
        let (u, _) = rerank(
            &history,
            &seed.dialogue_id,
            systems,
            judge,
            encoder,
            mode,
            rng_seed.wrapping_add((t as u64) << 8),
        )?;
        history.push(u.clone());
        generated.push(u);
    }
    Ok(Dialogue {
        dialogue_id: crate::selftalk::selftalk_id(System::Rerank, &seed.dialogue_id),
        origin_system: System::Rerank,
        seed: seed.seed.clone(),
        generated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemScore {
    pub system: System,
    pub contexts: usize,
    pub mean_true: f64,
    pub mean_judge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankEvaluation {
    pub contexts: usize,
    pub systems: Vec<SystemScore>,
    pub reranked: SystemScore,
    /// How often each system's response was picked.
    pub selections: BTreeMap<System, usize>,
}

impl RerankEvaluation {
    /// Highest mean true rating among the single systems.
    pub fn best_single(&self) -> Option<&SystemScore> {
        self.systems
            .iter()
            .filter(|s| s.contexts > 0)
            .max_by(|a, b| a.mean_true.total_cmp(&b.mean_true))
    }
}

/// Re-ranks one response per context and scores every candidate with
/// `rater`, comparing the selection against each system alone.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_rerank<T: Scalar>(
    contexts: &[Dialogue],
    systems: &[RerankSystem<'_, T>],
    judge: &JudgeModel<T>,
    encoder: &mut JudgeEncoder<T>,
    mode: DecodeMode,
    seed: u64,
    rater: impl Fn(&[Utterance], &Utterance) -> f64,
) -> Result<RerankEvaluation> {
    if contexts.is_empty() {
        return Err(Error::NoData("no contexts to re-rank".into()));
    }
    let mut sums: BTreeMap<System, (usize, f64, f64)> = BTreeMap::new();
    for s in systems {
        sums.insert(s.params.architecture.system(), (0, 0.0, 0.0));
    }
    let mut picked = (0.0, 0.0);
    let mut selections = BTreeMap::new();
    for (k, d) in contexts.iter().enumerate() {
        let ctx: Vec<Utterance> = d.turns().cloned().collect();
        let (_, set) = rerank(&ctx, &d.dialogue_id, systems, judge, encoder, mode, crate::selftalk::dialogue_seed(seed, k))?;
        let best = set.select()?;
        for (i, c) in set.candidates.iter().enumerate() {
            let truth = rater(&ctx, &c.response);
            let e = sums.get_mut(&c.origin_system).expect("known system");
            e.0 += 1;
            e.1 += truth;
            e.2 += c.judge_score;
            if i == best {
                picked.0 += truth;
                picked.1 += c.judge_score;
                *selections.entry(c.origin_system).or_insert(0) += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let n = contexts.len();
    Ok(RerankEvaluation {
        contexts: n,
        systems: sums
            .into_iter()
            .map(|(system, (c, t, j))| SystemScore {
                system,
                contexts: c,
                mean_true: mean(t, c),
                mean_judge: mean(j, c),
            })
            .collect(),
        reranked: SystemScore {
            system: System::Rerank,
            contexts: n,
            mean_true: mean(picked.0, n),
            mean_judge: mean(picked.1, n),
        },
        selections,
    })
}
