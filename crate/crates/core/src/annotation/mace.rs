//! MACE: each judge either copies an item's true label (probability θ_j) or
//! draws one from a personal spam distribution ξ_j.
//!
//! The M-step adds `smoothing` pseudo-counts, which makes EM a MAP procedure
//! under Beta(1+s, 1+s) and Dirichlet(1+s) priors. The tracked objective is
//! therefore the log-likelihood plus those log-prior terms; it reduces to
//! the plain log-likelihood at zero smoothing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AggregatedLabel, JudgeProfile, TurnRating, NUM_LABELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaceConfig {
    pub em_iters: usize,
    pub restarts: usize,
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for MaceConfig {
    fn default() -> Self {
        MaceConfig {
            em_iters: 50,
            restarts: 10,
            smoothing: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaceOutput {
    pub labels: Vec<AggregatedLabel>,
    pub profiles: Vec<JudgeProfile>,
    /// Posterior over labels 1..=5 per item, same order as `labels`.
    pub posteriors: Vec<[f64; NUM_LABELS]>,
    /// Objective after every EM iteration of the selected restart.
    pub trace: Vec<f64>,
    /// Objective traces of every restart.
    pub restart_traces: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

/// Ratings re-indexed as `(item, judge, label index)`.
pub struct Indexed {
    pub items: Vec<(String, usize)>,
    pub judges: Vec<String>,
    pub obs: Vec<(usize, usize, usize)>,
}

pub fn index_ratings(ratings: &[TurnRating]) -> Result<Indexed> {
    let mut items: BTreeMap<(String, usize), usize> = BTreeMap::new();
    let mut judges: BTreeMap<String, usize> = BTreeMap::new();
    for r in ratings {
        if !(1..=NUM_LABELS as u8).contains(&r.rating) {
            return Err(Error::Annotation(format!(
                "rating {} of {}#{} by {} is outside 1..=5",
                r.rating, r.dialogue_id, r.turn_index, r.judge_id
            )));
        }
        items.entry((r.dialogue_id.clone(), r.turn_index)).or_insert(0);
        judges.entry(r.judge_id.clone()).or_insert(0);
    }
    for (i, v) in items.values_mut().enumerate() {
        *v = i;
    }
    for (i, v) in judges.values_mut().enumerate() {
        *v = i;
    }
    let obs = ratings
        .iter()
        .map(|r| {
            (
                items[&(r.dialogue_id.clone(), r.turn_index)],
                judges[&r.judge_id],
                (r.rating - 1) as usize,
            )
        })
        .collect();
    Ok(Indexed {
        items: items.into_keys().collect(),
        judges: judges.into_keys().collect(),
        obs,
    })
}

#[derive(Debug, Clone)]
pub struct Params {
    pub theta: Vec<f64>,
    pub xi: Vec<[f64; NUM_LABELS]>,
}

/// `P(A = a | T = t)` for judge `j`.
fn emission(p: &Params, j: usize, a: usize, t: usize) -> f64 {
    let copy = if a == t { p.theta[j] } else { 0.0 };
    copy + (1.0 - p.theta[j]) * p.xi[j][a]
}

/// Label posteriors per item and the log-likelihood, under a uniform prior
/// over true labels.
pub fn posteriors(data: &Indexed, p: &Params) -> (Vec<[f64; NUM_LABELS]>, f64) {
    let mut logq = vec![[0.0f64; NUM_LABELS]; data.items.len()];
    for &(i, j, a) in &data.obs {
        for (t, lq) in logq[i].iter_mut().enumerate() {
            *lq += emission(p, j, a, t).ln();
        }
    }
    let mut ll = 0.0;
    let post = logq
        .iter()
        .map(|lq| {
            let m = lq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut q = [0.0; NUM_LABELS];
            if m == f64::NEG_INFINITY {
                q = [1.0 / NUM_LABELS as f64; NUM_LABELS];
                ll += m;
                return q;
            }
            let mut z = 0.0;
            for t in 0..NUM_LABELS {
                q[t] = (lq[t] - m).exp();
                z += q[t];
            }
            for v in q.iter_mut() {
                *v /= z;
            }
            ll += m + z.ln() - (NUM_LABELS as f64).ln();
            q
        })
        .collect();
    (post, ll)
}

fn log_prior(p: &Params, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let mut lp = 0.0;
    for (j, th) in p.theta.iter().enumerate() {
        lp += s * (th.ln() + (1.0 - th).ln());
        lp += s * p.xi[j].iter().map(|x| x.ln()).sum::<f64>();
    }
    lp
}

/// Log-likelihood plus smoothing log-prior: the quantity EM never decreases.
pub fn objective(data: &Indexed, p: &Params, smoothing: f64) -> f64 {
    posteriors(data, p).1 + log_prior(p, smoothing)
}

fn m_step(data: &Indexed, p: &Params, post: &[[f64; NUM_LABELS]], s: f64) -> Params {
    let nj = data.judges.len();
    let mut copy = vec![0.0; nj];
    let mut total = vec![0.0; nj];
    let mut spam = vec![[0.0; NUM_LABELS]; nj];
    for &(i, j, a) in &data.obs {
        let th = p.theta[j];
        let denom = th + (1.0 - th) * p.xi[j][a];
        let c = if denom > 0.0 { post[i][a] * th / denom } else { 0.0 };
        copy[j] += c;
        total[j] += 1.0;
        spam[j][a] += 1.0 - c;
    }
    let mut next = p.clone();
    for j in 0..nj {
        let d = total[j] + 2.0 * s;
        if d > 0.0 {
            next.theta[j] = (copy[j] + s) / d;
        }
        let spam_total: f64 = spam[j].iter().sum::<f64>() + NUM_LABELS as f64 * s;
        if spam_total > 0.0 {
            for a in 0..NUM_LABELS {
                next.xi[j][a] = (spam[j][a] + s) / spam_total;
            }
        }
    }
    next
}

fn random_init(nj: usize, rng: &mut ChaCha8Rng) -> Params {
    let theta = (0..nj).map(|_| rng.random_range(0.5..0.95)).collect();
    let xi = (0..nj)
        .map(|_| {
            let mut x = [0.0; NUM_LABELS];
            for v in x.iter_mut() {
                *v = 1.0 + rng.random_range(0.0..0.1);
            }
            let z: f64 = x.iter().sum();
            x.map(|v| v / z)
        })
        .collect();
    Params { theta, xi }
}

/// Runs EM from `init`; returns final params and the objective after each
/// iteration.
pub fn run_em(data: &Indexed, init: Params, iters: usize, smoothing: f64) -> (Params, Vec<f64>) {
    let mut p = init;
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (post, _) = posteriors(data, &p);
        p = m_step(data, &p, &post, smoothing);
        trace.push(objective(data, &p, smoothing));
    }
    (p, trace)
}

/// Best-of-`restarts` MAP-EM. Labels are posterior argmaxes with ties going
/// to the lower rating; confidence is the posterior mass of the label.
pub fn mace_aggregate(ratings: &[TurnRating], cfg: &MaceConfig) -> Result<MaceOutput> {
    if cfg.em_iters < 1 {
        return Err(Error::InvalidArgument("em_iters must be at least 1".into()));
    }
    if cfg.restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if !(cfg.smoothing >= 0.0 && cfg.smoothing.is_finite()) {
        return Err(Error::InvalidArgument("smoothing must be a finite non-negative number".into()));
    }
    if ratings.is_empty() {
        return Err(Error::NoData("no ratings to aggregate".into()));
    }
    let data = index_ratings(ratings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Params, Vec<f64>)> = None;
    let mut restart_traces = Vec::with_capacity(cfg.restarts);
    for _ in 0..cfg.restarts {
        let init = random_init(data.judges.len(), &mut rng);
        let (p, trace) = run_em(&data, init, cfg.em_iters, cfg.smoothing);
        let score = *trace.last().expect("at least one iteration");
        let better = match &best {
            None => true,
            Some((_, t)) => score > *t.last().expect("trace"),
        };
        restart_traces.push(trace.clone());
        if better {
            best = Some((p, trace));
        }
    }
    let (params, trace) = best.expect("at least one restart");
    let (post, ll) = posteriors(&data, &params);
    let labels = data
        .items
        .iter()
        .zip(&post)
        .map(|((d, t), q)| {
            let mut k = 0;
            for a in 1..NUM_LABELS {
                if q[a] > q[k] {
                    k = a;
                }
            }
            AggregatedLabel {
                dialogue_id: d.clone(),
                turn_index: *t,
                label: k as u8 + 1,
                confidence: q[k],
            }
        })
        .collect();
    let profiles = data
        .judges
        .iter()
        .enumerate()
        .map(|(j, id)| JudgeProfile {
            judge_id: id.clone(),
            competence: params.theta[j],
            spam_distribution: params.xi[j],
        })
        .collect();
    Ok(MaceOutput {
        labels,
        profiles,
        posteriors: post,
        trace,
        restart_traces,
        log_likelihood: ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(d: &str, t: usize, j: &str, v: u8) -> TurnRating {
        TurnRating {
            dialogue_id: d.into(),
            turn_index: t,
            judge_id: j.into(),
            rating: v,
            timestamp: 0,
        }
    }

    #[test]
    fn unanimous_fours() {
        let mut rs = Vec::new();
        for t in 0..6 {
            for j in ["a", "b", "c"] {
                rs.push(r("d", t, j, 4));
            }
        }
        let out = mace_aggregate(&rs, &MaceConfig::default()).unwrap();
        assert!(out.labels.iter().all(|l| l.label == 4 && l.confidence >= 0.99));
        assert!(out.profiles.iter().all(|p| p.competence >= 0.9));
        for p in &out.profiles {
            assert!((p.spam_distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_judge_labels_equal_ratings() {
        let rs: Vec<_> = (0..5).map(|t| r("d", t, "a", t as u8 + 1)).collect();
        let out = mace_aggregate(&rs, &MaceConfig::default()).unwrap();
        let labels: Vec<u8> = out.labels.iter().map(|l| l.label).collect();
        assert_eq!(labels, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn objective_never_decreases() {
        let mut rs = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..15 {
            for j in ["a", "b", "c", "d"] {
                rs.push(r("x", t, j, rng.random_range(1..=5)));
            }
        }
        for s in [0.0, 0.1, 1.0] {
            let out = mace_aggregate(&rs, &MaceConfig { smoothing: s, ..Default::default() }).unwrap();
            for tr in &out.restart_traces {
                for w in tr.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "smoothing {s}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn invalid_arguments() {
        let rs = vec![r("d", 0, "a", 3)];
        assert!(mace_aggregate(&rs, &MaceConfig { em_iters: 0, ..Default::default() }).is_err());
        assert!(mace_aggregate(&[r("d", 0, "a", 6)], &MaceConfig::default()).is_err());
        assert!(mace_aggregate(&[], &MaceConfig::default()).is_err());
    }
}
