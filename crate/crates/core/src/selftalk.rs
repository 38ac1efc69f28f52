//! Evaluation dialogues produced by letting one system talk to itself.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::{Dialogue, System, Utterance};
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::models::{generate_response, Architecture, DecodeMode, ModelParams};
use crate::scalar::Scalar;

pub const DEFAULT_TURNS: usize = 10;
pub const DE_POOL_SIZE: usize = 100;

#[derive(Debug, Clone)]
pub struct SelfTalkJob {
    pub system: System,
    pub contexts: Vec<Dialogue>,
    pub turns_per_dialogue: usize,
    pub rng_seed: u64,
    pub mode: DecodeMode,
}

/// Response pool for the Dual Encoder: training responses plus, per seed
/// dialogue id, responses other systems produced for that seed.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    pub training: Vec<Vec<u32>>,
    pub per_seed: BTreeMap<String, Vec<Vec<u32>>>,
    pub size: usize,
}

impl CandidatePool {
    pub fn draw(&self, seed_id: &str, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
        let size = if self.size == 0 { DE_POOL_SIZE } else { self.size };
        let extra = self.per_seed.get(seed_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut out: Vec<Vec<u32>> = extra.iter().take(size).cloned().collect();
        let want = (size - out.len()).min(self.training.len());
        for i in index::sample(rng, self.training.len(), want) {
            out.push(self.training[i].clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfTalkManifest {
    pub system: System,
    pub seed_ids: Vec<String>,
    pub rng_seed: u64,
    pub decode_mode: DecodeMode,
    pub turns_per_dialogue: usize,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct SelfTalkOutput {
    pub dialogues: Vec<Dialogue>,
    pub manifest: SelfTalkManifest,
}

/// Seeds built from the final `seed_turns` turns of `n` pool dialogues drawn
/// uniformly without replacement. Seeds keep their source dialogue id.
pub fn sample_contexts(pool: &[Dialogue], n: usize, rng_seed: u64, seed_turns: usize) -> Result<Vec<Dialogue>> {
    if pool.len() < n {
        return Err(Error::InvalidArgument(format!(
            "asked for {n} contexts from a pool of {}",
            pool.len()
        )));
    }
    if seed_turns == 0 {
        return Err(Error::InvalidArgument("seed_turns must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| {
            let d = &pool[i];
            let turns = d.all_turns();
            let start = turns.len().saturating_sub(seed_turns);
            Dialogue {
                dialogue_id: d.dialogue_id.clone(),
                origin_system: System::Human,
                seed: turns[start..].to_vec(),
                generated: Vec::new(),
            }
        })
        .collect())
}

/// Seed for dialogue `k` of a job, independent of generation order.
pub fn dialogue_seed(job_seed: u64, k: usize) -> u64 {
    job_seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn selftalk_id(system: System, seed_id: &str) -> String {
    format!("{system}:{seed_id}")
}

/// Continues one seed for `turns` generated turns, alternating speakers.
pub fn continue_dialogue<T: Scalar>(
    seed: &Dialogue,
    params: &ModelParams<T>,
    vocab: &Vocab,
    turns: usize,
    mode: DecodeMode,
    rng_seed: u64,
    pool: Option<&CandidatePool>,
) -> Result<Vec<Utterance>> {
    let max_len = params.config.max_utterance_len;
    let mut history: Vec<Vec<u32>> = seed.turns().map(|u| vocab.encode(u, max_len)).collect();
    let mut speaker = seed
        .seed
        .last()
        .ok_or_else(|| Error::InvalidArgument(format!("seed '{}' has no turns", seed.dialogue_id)))?
        .speaker;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(turns);
    for t in 0..turns {
        speaker = speaker.other();
        let candidates = match (params.architecture, pool) {
            (Architecture::De, Some(p)) => Some(p.draw(&seed.dialogue_id, &mut rng)),
            _ => None,
        };
        let ids = generate_response(
            params,
            &history,
            mode,
            rng_seed.wrapping_add(t as u64),
            candidates.as_deref(),
        )?;
        let tokens = vocab.decode(&ids);
        let u = Utterance::from_tokens(speaker, tokens);
        history.push(vocab.encode(&u, max_len));
        out.push(u);
    }
    Ok(out)
}

pub fn run_selftalk<T: Scalar>(
    job: &SelfTalkJob,
    params: &ModelParams<T>,
    vocab: &Vocab,
    pool: Option<&CandidatePool>,
) -> Result<SelfTalkOutput> {
    if job.turns_per_dialogue == 0 {
        return Err(Error::InvalidArgument("turns_per_dialogue must be at least 1".into()));
    }
    if Architecture::from_system(job.system) != Some(params.architecture) {
        return Err(Error::Architecture(format!(
            "job is for {} but the parameters are {}",
            job.system, params.architecture
        )));
    }
    let mut dialogues = Vec::with_capacity(job.contexts.len());
    let mut failures = Vec::new();
    for (k, seed) in job.contexts.iter().enumerate() {
        let r = continue_dialogue(
            seed,
            params,
            vocab,
            job.turns_per_dialogue,
            job.mode,
            dialogue_seed(job.rng_seed, k),
            pool,
        );
        match r {
            Ok(generated) => dialogues.push(Dialogue {
                dialogue_id: selftalk_id(job.system, &seed.dialogue_id),
                origin_system: job.system,
                seed: seed.seed.clone(),
                generated,
            }),
            Err(e) => {
                tracing::warn!(seed = %seed.dialogue_id, error = %e, "self-talk failed");
                failures.push((seed.dialogue_id.clone(), e.to_string()));
            }
        }
    }
    if !failures.is_empty() {
        tracing::warn!(count = failures.len(), system = %job.system, "self-talk failures");
    }
    Ok(SelfTalkOutput {
        dialogues,
        manifest: SelfTalkManifest {
            system: job.system,
            seed_ids: job.contexts.iter().map(|d| d.dialogue_id.clone()).collect(),
            rng_seed: job.rng_seed,
            decode_mode: job.mode,
            turns_per_dialogue: job.turns_per_dialogue,
            failures,
        },
    })
}
