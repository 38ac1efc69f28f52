use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::coarse::coarse_ids;
use super::graph::Graph;
use super::{Architecture, ModelParams};
use crate::autodiff::Var;
use crate::corpus::vocab::{EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

fn pick<T: Scalar>(logits: &[T], mode: DecodeMode, rng: &mut ChaCha8Rng) -> u32 {
    let allowed = |i: usize| i != PAD as usize && i != SOS as usize;
    match mode {
        DecodeMode::Greedy => {
            let mut best = EOS as usize;
            for (i, &l) in logits.iter().enumerate() {
                if allowed(i) && l > logits[best] {
                    best = i;
                }
            }
            best as u32
        }
        DecodeMode::Sample => {
            let masked: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, l)| if allowed(i) { l.as_f64() } else { f64::NEG_INFINITY })
                .collect();
            let lse = scalar::log_sum_exp(&masked);
            let mut u: f64 = rng.random();
            for (i, &l) in masked.iter().enumerate() {
                let pr = (l - lse).exp();
                if u < pr {
                    return i as u32;
                }
                u -= pr;
            }
            EOS
        }
    }
}

/// Decodes from `cond` until EOS or `max_len - 1` tokens; EOS is not
/// included in the result.
fn decode<T: Scalar>(
    g: &mut Graph<'_, T>,
    coarse: bool,
    cond: Var,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let (init, lstm, output) = if coarse {
        ("coarse_dec", "coarse_decoder", "coarse_output")
    } else {
        ("dec", "decoder", "output")
    };
    let max_tokens = g.params.config.max_utterance_len - 1;
    let (mut h, mut c) = g.decoder_start(init, cond);
    let mut prev = SOS;
    let mut out = Vec::new();
    while out.len() < max_tokens {
        let (h2, c2, logits) = g.decoder_step(lstm, output, prev, h, c);
        h = h2;
        c = c2;
        let next = pick(g.tape.value(logits), mode, rng);
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    out
}

/// Response token ids (without EOS) for a context of encoded turns.
///
/// The Dual Encoder ranks `candidates` (each ending in EOS) by `σ(cᵀMr)` and
/// returns the best, or one drawn in proportion to `exp(cᵀMr)` when
/// sampling. Generative systems ignore `candidates`.
pub fn generate_response<T: Scalar>(
    p: &ModelParams<T>,
    context: &[Vec<u32>],
    mode: DecodeMode,
    seed: u64,
    candidates: Option<&[Vec<u32>]>,
) -> Result<Vec<u32>> {
    if context.is_empty() {
        return Err(Error::InvalidArgument("context has no turns".into()));
    }
    for t in context {
        p.check_ids(t)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(p);
    let ctx = g.encode_context(context);
    let out = match p.architecture {
        Architecture::De => {
            let pool = candidates
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::InvalidArgument("the dual encoder needs a candidate pool".into()))?;
            let mut logits = Vec::with_capacity(pool.len());
            for cand in pool {
                p.check_ids(cand)?;
                let ids: &[u32] = if cand.is_empty() { &[EOS] } else { cand };
                let r = g.encode_turn(ids);
                let l = g.de_logit(ctx, r);
                logits.push(g.tape.scalar_value(l));
            }
            let best = match mode {
                DecodeMode::Greedy => {
                    let mut best = 0;
                    for (i, l) in logits.iter().enumerate() {
                        if *l > logits[best] {
                            best = i;
                        }
                    }
                    best
                }
                DecodeMode::Sample => {
                    let lse = scalar::log_sum_exp(&logits);
                    let mut u = T::of(rng.random::<f64>());
                    let mut chosen = logits.len() - 1;
                    for (i, l) in logits.iter().enumerate() {
                        let pr = (*l - lse).exp();
                        if u < pr {
                            chosen = i;
                            break;
                        }
                        u -= pr;
                    }
                    chosen
                }
            };
            pool[best].iter().copied().take_while(|&i| i != EOS).collect()
        }
        Architecture::Seq2seq | Architecture::Hred => decode(&mut g, false, ctx, mode, &mut rng),
        Architecture::Vhred => {
            let (mu, lv) = g.gaussian("prior", ctx);
            let z = match mode {
                DecodeMode::Greedy => mu,
                DecodeMode::Sample => {
                    let eps: Vec<T> = (0..p.config.latent_dim)
                        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
                        .collect();
                    g.reparameterize(mu, lv, &eps)
                }
            };
            let cond = g.tape.concat(&[ctx, z]);
            decode(&mut g, false, cond, mode, &mut rng)
        }
        Architecture::Mrrnn => {
            let coarse_ctx_turns: Vec<Vec<u32>> =
                context.iter().map(|t| coarse_ids(t, &p.stoplist)).collect();
            let cctx = g.encode_coarse_context(&coarse_ctx_turns);
            let mut coarse = decode(&mut g, true, cctx, mode, &mut rng);
            coarse.push(EOS);
            let cenc = g.encode_coarse_turn(&coarse, p.config.turn_encoder_units);
            let cond = g.tape.concat(&[ctx, cctx, cenc]);
            decode(&mut g, false, cond, mode, &mut rng)
        }
    };
    Ok(out)
}

/// Summed NLL of `response` (EOS appended) given `context`, on the graph.
/// Seq2Seq and HRED only: the systems whose likelihood is exact.
pub fn response_nll<T: Scalar>(g: &mut Graph<'_, T>, context: &[Vec<u32>], response: &[u32]) -> Result<Var> {
    match g.params.architecture {
        Architecture::Seq2seq | Architecture::Hred => {}
        a => {
            return Err(Error::Architecture(format!(
                "exact response likelihood is not available for {a}"
            )))
        }
    }
    let mut target = response.to_vec();
    target.push(EOS);
    g.params.check_ids(&target)?;
    let ctx = g.encode_context(context);
    Ok(g.decoder_nll(false, ctx, &target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::EncoderConfig;

    fn tiny(arch: Architecture) -> ModelParams<f64> {
        let cfg = EncoderConfig {
            turn_encoder_units: 4,
            context_encoder_units: 5,
            decoder_units: 4,
            embedding_dim: 3,
            latent_dim: 2,
            max_utterance_len: 8,
            ..EncoderConfig::desk()
        };
        let mut p = ModelParams::init(arch, cfg, 12, "h", None, 9).unwrap();
        p.stoplist = vec![4, 5];
        p
    }

    #[test]
    fn eos_favouring_output_gives_empty_response() {
        let mut p = tiny(Architecture::Hred);
        let w = p.weights.get_mut("output.w").unwrap();
        w.data.fill(0.0);
        let b = p.weights.get_mut("output.b").unwrap();
        b.data.fill(0.0);
        b.data[EOS as usize] = 10.0;
        let r = generate_response(&p, &[vec![6, 7, EOS]], DecodeMode::Greedy, 0, None).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn greedy_is_deterministic_and_length_bounded() {
        for arch in [Architecture::Seq2seq, Architecture::Hred, Architecture::Vhred, Architecture::Mrrnn] {
            let p = tiny(arch);
            let ctx = vec![vec![6, 7, EOS], vec![8, EOS]];
            let a = generate_response(&p, &ctx, DecodeMode::Greedy, 1, None).unwrap();
            let b = generate_response(&p, &ctx, DecodeMode::Greedy, 2, None).unwrap();
            assert_eq!(a, b, "{arch}");
            assert!(a.len() < 8);
            let s1 = generate_response(&p, &ctx, DecodeMode::Sample, 5, None).unwrap();
            let s2 = generate_response(&p, &ctx, DecodeMode::Sample, 5, None).unwrap();
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn dual_encoder_needs_candidates_and_returns_one() {
        let p = tiny(Architecture::De);
        let ctx = vec![vec![6, EOS]];
        assert!(generate_response(&p, &ctx, DecodeMode::Greedy, 0, None).is_err());
        let pool = vec![vec![6, 7, EOS], vec![9, EOS]];
        let r = generate_response(&p, &ctx, DecodeMode::Greedy, 0, Some(&pool)).unwrap();
        assert!(r == vec![6, 7] || r == vec![9]);
    }
}
