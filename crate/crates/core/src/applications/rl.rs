use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::degeneracy::{degeneracy_report, DegeneracyReport};
use super::policy::{policy_gradient_update, DialoguePolicy, Episode, PolicyState, Step};
use crate::corpus::dialogue::{Dialogue, System, Utterance};
use crate::error::{Error, Result};
use crate::judge::{JudgeEncoder, JudgeModel};
use crate::models::generate::{generate_response, DecodeMode};
use crate::scalar::Scalar;
use crate::selftalk::selftalk_id;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub episodes: usize,
    /// Generated turns per rollout.
    pub rollout_len: usize,
    /// Returns and degeneracy are averaged over this many recent episodes.
    pub rolling_window: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            episodes: 80,
            rollout_len: 5,
            rolling_window: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub rolling_return: f64,
    pub frac_empty: f64,
    pub frac_repeat: f64,
    pub modal_share: f64,
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub trace: Vec<TraceRow>,
    pub degeneracy: Vec<DegeneracyReport>,
    pub dialogues: Vec<Dialogue>,
    /// Set when training stopped early; the trace up to that point is kept.
    pub halted: Option<String>,
}

pub type DialogueEpisode = Episode<Vec<Vec<u32>>, Vec<u32>>;

/// Samples one self-talk rollout from `seed`, rewarding every generated turn
/// with the raw judge score.
pub fn rollout<T: Scalar>(
    policy: &DialoguePolicy<T>,
    judge: &JudgeModel<T>,
    encoder: &mut JudgeEncoder<T>,
    seed: &Dialogue,
    turns: usize,
    rng_seed: u64,
) -> Result<DialogueEpisode> {
    let p = &policy.params;
    let max_len = p.config.max_utterance_len;
    let mut utts: Vec<Utterance> = seed.turns().cloned().collect();
    let mut speaker = utts
        .last()
        .ok_or_else(|| Error::InvalidArgument(format!("seed '{}' has no turns", seed.dialogue_id)))?
        .speaker;
    let mut history: Vec<Vec<u32>> = utts.iter().map(|u| encoder.vocab.encode(u, max_len)).collect();
    let mut steps = Vec::with_capacity(turns);
    let mut generated = Vec::with_capacity(turns);
    for t in 0..turns {
        speaker = speaker.other();
        let ids = generate_response(p, &history, DecodeMode::Sample, rng_seed.wrapping_add(t as u64), None)?;
        let logprob = policy.log_prob(&history, &ids)?;
        let u = Utterance::from_tokens(speaker, encoder.vocab.decode(&ids));
        let (c, r) = encoder.encode(&utts, &u)?;
        let reward = judge.score_encoded(&c, &r)?.as_f64();
        steps.push(Step {
            context: history.clone(),
            response: ids,
            logprob,
            reward,
        });
        history.push(encoder.vocab.encode(&u, max_len));
        utts.push(u.clone());
        generated.push(u);
    }
    let dialogue = Dialogue {
        dialogue_id: selftalk_id(System::Rl, &seed.dialogue_id),
        origin_system: System::Rl,
        seed: seed.seed.clone(),
        generated,
    };
    Ok(Episode::new(Some(dialogue), steps))
}

/// Policy-gradient training against the judge. Rollouts start from seeds
/// drawn uniformly from `seeds`; an update is applied every
/// `episode_batch_size` episodes.
pub fn run_rl<T: Scalar>(
    state: &mut PolicyState<T, DialoguePolicy<T>>,
    judge: &JudgeModel<T>,
    encoder: &mut JudgeEncoder<T>,
    seeds: &[Dialogue],
    cfg: &RlConfig,
) -> Result<RlOutcome> {
    let mut out = RlOutcome {
        trace: Vec::with_capacity(cfg.episodes),
        degeneracy: Vec::with_capacity(cfg.episodes),
        dialogues: Vec::with_capacity(cfg.episodes),
        halted: None,
    };
    if cfg.episodes == 0 {
        return Ok(out);
    }
    if seeds.is_empty() {
        return Err(Error::NoData("no seed contexts for RL".into()));
    }
    if cfg.rollout_len == 0 {
        return Err(Error::InvalidArgument("rollout_len must be at least 1".into()));
    }
    if judge.encoder.hash != encoder.hash() {
        return Err(Error::HashMismatch {
            expected: judge.encoder.hash.clone(),
            found: encoder.hash(),
        });
    }
    if state.policy.params.vocab_hash != encoder.vocab.hash() {
        return Err(Error::HashMismatch {
            expected: encoder.vocab.hash(),
            found: state.policy.params.vocab_hash.clone(),
        });
    }
    let window = cfg.rolling_window.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch: Vec<DialogueEpisode> = Vec::with_capacity(state.episode_batch_size);
    let mut returns = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let seed = &seeds[rng.random_range(0..seeds.len())];
        let ep_seed: u64 = rng.random();
        let ep = rollout(&state.policy, judge, encoder, seed, cfg.rollout_len, ep_seed)?;
        returns.push(ep.ret());
        let mut d = ep.dialogue.clone().expect("rollouts carry their dialogue");
        d.dialogue_id = format!("{}#{e}", d.dialogue_id);
        out.dialogues.push(d);
        let lo = returns.len().saturating_sub(window);
        let rolling = returns[lo..].iter().sum::<f64>() / (returns.len() - lo) as f64;
        let deg = degeneracy_report(&out.dialogues[lo..])?;
        out.trace.push(TraceRow {
            episode: e + 1,
            ret: ep.ret(),
            rolling_return: rolling,
            frac_empty: deg.frac_empty,
            frac_repeat: deg.frac_repeat,
            modal_share: deg.modal_response_share,
        });
        out.degeneracy.push(deg);
        batch.push(ep);
        if batch.len() == state.episode_batch_size {
            match policy_gradient_update(state, &batch) {
                Ok(_) => {}
                Err(err @ Error::NonFinite { .. }) => {
                    out.halted = Some(format!("episode {}: {err}", e + 1));
                    return Ok(out);
                }
                Err(err) => return Err(err),
            }
            batch.clear();
            if !state.policy.params.weights.all_finite() {
                out.halted = Some(format!("episode {}: policy weights became non-finite", e + 1));
                return Ok(out);
            }
        }
    }
    Ok(out)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for row in trace {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Rolling return as a standalone SVG line chart.
pub fn trace_svg(trace: &[TraceRow]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if trace.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let ys: Vec<f64> = trace.iter().map(|r| r.rolling_return).collect();
    let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let n = trace.len().max(2) - 1;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    svg.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    ));
    let pts: Vec<String> = ys.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    ));
    svg.push_str(&format!(
        "<text x=\"{pad}\" y=\"{t}\" font-size=\"12\">{hi:.2}</text>\n\
         <text x=\"{pad}\" y=\"{u}\" font-size=\"12\">{lo:.2}</text>\n\
         <text x=\"{cx}\" y=\"{bx}\" font-size=\"12\" text-anchor=\"middle\">episode</text>\n\
         <text x=\"{cx}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">rolling average return</text>\n</svg>\n",
        t = pad - 6.0,
        u = h - pad + 16.0,
        cx = w / 2.0,
        bx = h - 12.0
    ));
    svg
}
