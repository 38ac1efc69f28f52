use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::coarse::{coarse_ids, Stoplist, DEFAULT_STOPLIST_SIZE};
use super::graph::Graph;
use super::{Architecture, EncoderConfig, ModelParams};
use crate::autodiff::Var;
use crate::corpus::dialogue::Dialogue;
use crate::corpus::embedding::EmbeddingTable;
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of all steps over which the VHRED KL weight ramps 0 → 1.
    pub kl_anneal_fraction: f64,
    /// Dual Encoder negatives per example.
    pub negatives: usize,
    /// Context turns kept before each response.
    pub max_context_turns: usize,
    pub stoplist_size: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.001,
            batch_size: 80,
            epochs: 10,
            seed: 0,
            kl_anneal_fraction: 0.25,
            negatives: 10,
            max_context_turns: 3,
            stoplist_size: DEFAULT_STOPLIST_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub wallclock: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
}

/// One (context, response) pair, vocabulary-encoded; every turn ends in EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub context: Vec<Vec<u32>>,
    pub response: Vec<u32>,
}

/// Every turn after the first becomes a response to the turns before it.
pub fn build_examples(
    dialogues: &[Dialogue],
    vocab: &Vocab,
    max_len: usize,
    max_context_turns: usize,
) -> Vec<Example> {
    let mut out = Vec::new();
    for d in dialogues {
        let ids: Vec<Vec<u32>> = d.turns().map(|u| vocab.encode(u, max_len)).collect();
        for i in 1..ids.len() {
            let start = i.saturating_sub(max_context_turns.max(1));
            out.push(Example {
                context: ids[start..i].to_vec(),
                response: ids[i].clone(),
            });
        }
    }
    out
}

/// Per-example training objective on the graph.
///
/// Generative systems use mean per-token NLL; VHRED adds `kl_weight · KL`
/// with `z` drawn using `eps`; MrRNN adds the coarse stream's NLL; the Dual
/// Encoder uses the contrastive loss against `negatives`.
pub fn example_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    ex: &Example,
    negatives: &[&[u32]],
    kl_weight: T,
    eps: &[T],
) -> Var {
    let p = g.params;
    let len = T::of(ex.response.len() as f64);
    let ctx = g.encode_context(&ex.context);
    match p.architecture {
        Architecture::Seq2seq | Architecture::Hred => {
            let nll = g.decoder_nll(false, ctx, &ex.response);
            g.tape.scale(nll, T::one() / len)
        }
        Architecture::Vhred => {
            let r = g.encode_turn(&ex.response);
            let post_in = g.tape.concat(&[ctx, r]);
            let (mu_q, lv_q) = g.gaussian("posterior", post_in);
            let (mu_p, lv_p) = g.gaussian("prior", ctx);
            let kl = g.kl(mu_q, lv_q, mu_p, lv_p);
            let z = g.reparameterize(mu_q, lv_q, eps);
            let cond = g.tape.concat(&[ctx, z]);
            let nll = g.decoder_nll(false, cond, &ex.response);
            let rec = g.tape.scale(nll, T::one() / len);
            let klw = g.tape.scale(kl, kl_weight);
            g.tape.add(rec, klw)
        }
        Architecture::Mrrnn => {
            let cctx_turns: Vec<Vec<u32>> = ex.context.iter().map(|t| coarse_ids(t, &p.stoplist)).collect();
            let cresp = coarse_ids(&ex.response, &p.stoplist);
            let cctx = g.encode_coarse_context(&cctx_turns);
            let cnll = g.decoder_nll(true, cctx, &cresp);
            let cenc = g.encode_coarse_turn(&cresp, p.config.turn_encoder_units);
            let cond = g.tape.concat(&[ctx, cctx, cenc]);
            let fnll = g.decoder_nll(false, cond, &ex.response);
            let c = g.tape.scale(cnll, T::one() / T::of(cresp.len() as f64));
            let f = g.tape.scale(fnll, T::one() / len);
            g.tape.add(c, f)
        }
        Architecture::De => {
            let r = g.encode_turn(&ex.response);
            let pos = g.de_logit(ctx, r);
            let mut terms = vec![g.tape.log_sigmoid(pos)];
            for n in negatives {
                let rn = g.encode_turn(n);
                let l = g.de_logit(ctx, rn);
                let neg = g.tape.scale(l, -T::one());
                terms.push(g.tape.log_sigmoid(neg));
            }
            let s = g.tape.add_n(&terms);
            g.tape.scale(s, -T::one())
        }
    }
}

/// KL weight after `step` of `total` optimizer steps.
pub fn kl_weight(step: usize, total: usize, anneal_fraction: f64) -> f64 {
    let ramp = (anneal_fraction * total as f64).max(1.0);
    (step as f64 / ramp).min(1.0)
}

/// Trains one system from scratch with Adam on minibatches.
pub fn train_model<T: Scalar>(
    data: &[Dialogue],
    architecture: Architecture,
    cfg: EncoderConfig,
    hyper: &TrainHyper,
    vocab: &Vocab,
    embedding: Option<&EmbeddingTable<T>>,
) -> Result<TrainOutcome<T>> {
    if data.is_empty() {
        return Err(Error::NoData("no training dialogues".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if architecture == Architecture::De && hyper.negatives == 0 {
        return Err(Error::InvalidArgument("the dual encoder needs at least one negative".into()));
    }
    let mut params = ModelParams::init(architecture, cfg, vocab.len(), vocab.hash(), embedding, hyper.seed)?;
    if architecture == Architecture::Mrrnn {
        params.stoplist = Stoplist::build(data, hyper.stoplist_size).ids(vocab);
    }
    let examples = build_examples(data, vocab, cfg.max_utterance_len, hyper.max_context_turns);
    if examples.is_empty() {
        return Err(Error::NoData("training dialogues have no multi-turn exchanges".into()));
    }
    train_examples(params, &examples, hyper)
}

/// Continues training `params` on prepared examples.
pub fn train_examples<T: Scalar>(
    mut params: ModelParams<T>,
    examples: &[Example],
    hyper: &TrainHyper,
) -> Result<TrainOutcome<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut adam = Adam::new(AdamConfig::with_lr(hyper.lr), &params.weights);
    let batches = examples.len().div_ceil(hyper.batch_size);
    let total_steps = hyper.epochs * batches;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;
    let latent = params.config.latent_dim;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let klw = T::of(kl_weight(step, total_steps, hyper.kl_anneal_fraction));
            let mut acc = params.weights.zeros_like();
            let batch_loss;
            {
                let mut g = Graph::new(&params);
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let ex = &examples[i];
                    let negatives: Vec<&[u32]> = if params.architecture == Architecture::De {
                        (0..hyper.negatives)
                            .map(|_| {
                                let mut j = rng.random_range(0..examples.len());
                                if j == i && examples.len() > 1 {
                                    j = (j + 1) % examples.len();
                                }
                                examples[j].response.as_slice()
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let eps: Vec<T> = (0..latent).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
                    losses.push(example_loss(&mut g, ex, &negatives, klw, &eps));
                }
                let total = g.tape.add_n(&losses);
                let mean = g.tape.scale(total, T::one() / T::of(chunk.len() as f64));
                batch_loss = g.tape.scalar_value(mean).as_f64();
                if !batch_loss.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        step,
                        detail: format!("{} training loss is {batch_loss}", params.architecture),
                    });
                }
                let grads = g.tape.backward(mean);
                g.bound().accumulate(&grads, &mut acc);
            }
            adam.step(&mut params.weights, &acc);
            epoch_loss += batch_loss * chunk.len() as f64;
            step += 1;
        }
        let loss = epoch_loss / examples.len() as f64;
        let wallclock = started.elapsed().as_secs_f64();
        tracing::info!(arch = %params.architecture, epoch, loss, wallclock, "epoch done");
        log.push(EpochLog { epoch, loss, wallclock });
    }
    if !params.weights.all_finite() {
        return Err(Error::NonFinite {
            epoch: hyper.epochs,
            step,
            detail: "weights became non-finite".into(),
        });
    }
    Ok(TrainOutcome { params, log })
}
