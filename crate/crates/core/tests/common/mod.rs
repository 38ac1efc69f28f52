//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use autojudge::annotation::{mace_aggregate, MaceConfig, TurnRating};
use autojudge::applications::{
    policy_gradient, policy_gradient_update, DialoguePolicy, PgOptimizer, Policy, PolicyState, SoftmaxBandit, Step,
};
use autojudge::corpus::{Dialogue, Speaker, System, Utterance};
use autojudge::judge::{make_folds, EncodedData, EncoderRef, JudgeConfig, JudgeModel, SplitMode};
use autojudge::models::graph::Graph;
use autojudge::models::ops;
use autojudge::models::train::{example_loss, Example};
use autojudge::models::{Architecture, EncoderConfig, ModelParams};
use autojudge::params::ParamSet;
use autojudge::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn eref() -> EncoderRef {
    EncoderRef {
        source: "oracle".into(),
        hash: "none".into(),
    }
}

/// `Σ_i Σ_j c_i M_ij r_j` written out as two loops.
pub fn bilinear_double_loop(c: &[f64], m: &Tensor<f64>, r: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..c.len() {
        for j in 0..r.len() {
            s += c[i] * m.data[i * m.cols + j] * r[j];
        }
    }
    s
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub coords: usize,
    pub passing: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        if self.coords == 0 {
            1.0
        } else {
            self.passing as f64 / self.coords as f64
        }
    }

    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            coords: self.coords + o.coords,
            passing: self.passing + o.passing,
            worst: self.worst.max(o.worst),
        }
    }
}

/// Central differences of `loss` at every coordinate of `params`, compared
/// with `analytic`. A coordinate passes when the relative error is under
/// `tol`, or when both values are below `floor` in magnitude.
pub fn grad_check(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    loss: impl Fn(&ParamSet<f64>) -> f64,
    h: f64,
    tol: f64,
    floor: f64,
) -> GradCheck {
    grad_check_where(params, analytic, loss, h, tol, floor, |_| true)
}

/// `grad_check` restricted to the tensors whose name passes `keep`.
pub fn grad_check_where(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    loss: impl Fn(&ParamSet<f64>) -> f64,
    h: f64,
    tol: f64,
    floor: f64,
    keep: impl Fn(&str) -> bool,
) -> GradCheck {
    let mut p = params.clone();
    let mut out = GradCheck {
        coords: 0,
        passing: 0,
        worst: 0.0,
    };
    for t in 0..params.len() {
        if !keep(&params.names()[t]) {
            continue;
        }
        for k in 0..params.tensors()[t].len() {
            let x0 = params.tensors()[t].data[k];
            p.tensors_mut()[t].data[k] = x0 + h;
            let up = loss(&p);
            p.tensors_mut()[t].data[k] = x0 - h;
            let down = loss(&p);
            p.tensors_mut()[t].data[k] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.tensors()[t].data[k];
            let denom = fd.abs().max(an.abs());
            let rel = if denom < floor { 0.0 } else { (fd - an).abs() / denom };
            out.coords += 1;
            if rel < tol {
                out.passing += 1;
            }
            out.worst = out.worst.max(rel);
        }
    }
    out
}

/// Labels from a hidden bilinear model on appended-one features, centred on
/// 3 with signal sd `signal_sd`, plus Gaussian noise, clamped to [1, 5].
pub fn hidden_bilinear_data(n: usize, d: usize, signal_sd: f64, noise_sd: f64, seed: u64) -> EncodedData<f64> {
    let mut g = rng(seed);
    let scale = signal_sd / (d as f64);
    let m: Vec<f64> = randn(&mut g, d * d).into_iter().map(|x| x * scale).collect();
    let mut data = EncodedData::default();
    for _ in 0..n {
        let c = randn(&mut g, d);
        let r = randn(&mut g, d);
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += c[i] * m[i * d + j] * r[j];
            }
        }
        let noise: f64 = StandardNormal.sample(&mut g);
        let y = (3.0 + s + noise_sd * noise).clamp(1.0, 5.0);
        data.c.push(c);
        data.r.push(r);
        data.y.push(y);
    }
    data
}

/// Rank of a row-major matrix by Gaussian elimination with partial pivoting.
pub fn rank(mut a: Vec<Vec<f64>>, tol: f64) -> usize {
    let rows = a.len();
    if rows == 0 {
        return 0;
    }
    let cols = a[0].len();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let piv = (r..rows).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[piv][c].abs() < tol {
            continue;
        }
        a.swap(r, piv);
        for i in 0..rows {
            if i != r {
                let f = a[i][c] / a[r][c];
                for k in c..cols {
                    a[i][k] -= f * a[r][k];
                }
            }
        }
        r += 1;
    }
    r
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub const TOY_VOCAB: usize = 9;

/// Every layer at most five units wide.
pub fn toy_config() -> EncoderConfig {
    EncoderConfig {
        turn_encoder_units: 3,
        context_encoder_units: 4,
        decoder_units: 5,
        embedding_dim: 3,
        bidirectional_turn_encoder: true,
        latent_dim: 2,
        max_utterance_len: 6,
    }
}

/// Toy model with weights spread to ±0.4 so gradients are not all tiny.
pub fn toy_model(arch: Architecture, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(arch, toy_config(), TOY_VOCAB, "toy", None, seed).unwrap();
    for t in p.weights.tensors_mut() {
        for x in t.data.iter_mut() {
            *x *= 5.0;
        }
    }
    p
}

pub fn toy_example() -> Example {
    Example {
        context: vec![vec![4, 5, 3], vec![6, 3]],
        response: vec![7, 4, 8, 3],
    }
}

fn with_weights(p: &ModelParams<f64>, w: &ParamSet<f64>) -> ModelParams<f64> {
    let mut q = p.clone();
    q.weights = w.clone();
    q
}

fn tape_grad(p: &ModelParams<f64>, ex: &Example, negatives: &[&[u32]], kl_weight: f64, eps: &[f64]) -> ParamSet<f64> {
    let mut g = Graph::new(p);
    let loss = example_loss(&mut g, ex, negatives, kl_weight, eps);
    let grads = g.tape.backward(loss);
    let mut acc = p.weights.zeros_like();
    g.bound().accumulate(&grads, &mut acc);
    acc
}

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

/// Mean per-token NLL of an HRED response.
pub fn check_reconstruction() -> GradCheck {
    let p = toy_model(Architecture::Hred, 1);
    let ex = toy_example();
    let an = tape_grad(&p, &ex, &[], 0.0, &[]);
    grad_check(
        &p.weights,
        &an,
        |w| {
            let q = with_weights(&p, w);
            let c = ops::encode_context(&q, &ex.context).unwrap();
            ops::reconstruction_loss(&q, &c, &ex.response).unwrap()
        },
        H,
        TOL,
        FLOOR,
    )
}

/// VHRED reconstruction plus KL at fixed posterior noise.
pub fn check_elbo() -> GradCheck {
    let p = toy_model(Architecture::Vhred, 2);
    let ex = toy_example();
    let eps = [0.3, -1.1];
    let an = tape_grad(&p, &ex, &[], 1.0, &eps);
    grad_check(
        &p.weights,
        &an,
        |w| {
            let q = with_weights(&p, w);
            let c = ops::encode_context(&q, &ex.context).unwrap();
            let t = ops::elbo_terms(&q, &c, &ex.response, &eps).unwrap();
            t.reconstruction + t.kl
        },
        H,
        TOL,
        FLOOR,
    )
}

fn log_sigmoid(x: f64) -> f64 {
    -(-x).exp().ln_1p()
}

/// Dual-encoder loss, recomputed in the oracle from the encodings and the
/// projection matrix.
pub fn check_contrastive() -> GradCheck {
    let p = toy_model(Architecture::De, 3);
    let ex = toy_example();
    let negs: Vec<Vec<u32>> = vec![vec![5, 5, 3], vec![8, 3], vec![4, 6, 7, 3]];
    let neg_refs: Vec<&[u32]> = negs.iter().map(Vec::as_slice).collect();
    let an = tape_grad(&p, &ex, &neg_refs, 0.0, &[]);
    grad_check(
        &p.weights,
        &an,
        |w| {
            let q = with_weights(&p, w);
            let c = ops::encode_context(&q, &ex.context).unwrap();
            let m = q.weights.get("response_proj.w").unwrap();
            let logit = |resp: &[u32]| {
                let r = ops::encode_turn(&q, resp).unwrap();
                bilinear_double_loop(&c, m, &r)
            };
            let mut loss = -log_sigmoid(logit(&ex.response));
            for n in &negs {
                loss -= log_sigmoid(-logit(n));
            }
            loss
        },
        H,
        TOL,
        FLOOR,
    )
}

/// Judge MSE with learned α and β, so every coordinate has a gradient.
pub fn check_judge_mse() -> GradCheck {
    let mut g = rng(4);
    let data = EncodedData {
        c: (0..6).map(|_| randn(&mut g, 4)).collect(),
        r: (0..6).map(|_| randn(&mut g, 4)).collect(),
        y: uniform_vec(&mut g, 6, 1.0, 5.0),
    };
    let idx: Vec<usize> = (0..6).collect();
    let config = JudgeConfig {
        learn_scale: true,
        ..Default::default()
    };
    let mut j = JudgeModel::new(4, 4, config, eref(), 5).unwrap();
    j.center_on(3.0);
    let (_, an) = j.mse_and_grad(&data, &idx);
    grad_check(
        &j.weights,
        &an,
        |w| {
            let mut k = j.clone();
            k.weights = w.clone();
            k.mse(&data, &idx)
        },
        H,
        TOL,
        FLOOR,
    )
}

/// Score function Σ ∇ log p(r | c) of an HRED policy.
pub fn check_policy_gradient() -> GradCheck {
    let policy = DialoguePolicy::new(toy_model(Architecture::Hred, 6)).unwrap();
    let steps: Vec<Step<Vec<Vec<u32>>, Vec<u32>>> = vec![
        Step {
            context: vec![vec![4, 5]],
            response: vec![7, 8],
            logprob: 0.0,
            reward: 1.0,
        },
        Step {
            context: vec![vec![4, 5], vec![7, 8]],
            response: vec![6],
            logprob: 0.0,
            reward: 1.0,
        },
    ];
    let an = policy.score_function(&steps).unwrap();
    grad_check(
        policy.weights(),
        &an,
        |w| {
            let q = DialoguePolicy::new(with_weights(&policy.params, w)).unwrap();
            steps.iter().map(|s| q.log_prob(&s.context, &s.response).unwrap()).sum()
        },
        H,
        TOL,
        FLOOR,
    )
}

pub fn gradient_suite() -> Vec<(&'static str, GradCheck)> {
    vec![
        ("reconstruction", check_reconstruction()),
        ("elbo", check_elbo()),
        ("contrastive", check_contrastive()),
        ("judge-mse", check_judge_mse()),
        ("policy-gradient", check_policy_gradient()),
    ]
}

pub fn rating(item: usize, judge: usize, value: u8) -> TurnRating {
    TurnRating {
        dialogue_id: format!("d{item}"),
        turn_index: 0,
        judge_id: format!("j{judge}"),
        rating: value,
        timestamp: 0,
    }
}

/// Label posteriors by summing the full joint over every true-label
/// assignment and every copy/spam choice of every observation.
pub fn brute_force_posteriors(
    obs: &[(usize, usize, usize)],
    items: usize,
    theta: &[f64],
    xi: &[[f64; 5]],
) -> Vec<[f64; 5]> {
    let mut mass = vec![[0.0; 5]; items];
    let mut total = 0.0;
    for labels in 0..5usize.pow(items as u32) {
        let t: Vec<usize> = (0..items).map(|i| labels / 5usize.pow(i as u32) % 5).collect();
        let mut joint_t = 0.0;
        for spam in 0..(1usize << obs.len()) {
            let mut p = 0.2f64.powi(items as i32);
            for (k, &(i, j, a)) in obs.iter().enumerate() {
                p *= if spam >> k & 1 == 1 {
                    (1.0 - theta[j]) * xi[j][a]
                } else if a == t[i] {
                    theta[j]
                } else {
                    0.0
                };
            }
            joint_t += p;
        }
        total += joint_t;
        for i in 0..items {
            mass[i][t[i]] += joint_t;
        }
    }
    for m in mass.iter_mut() {
        for v in m.iter_mut() {
            *v /= total;
        }
    }
    mass
}

/// Random rating sets for every shape up to 3 judges × 4 items, with each
/// judge rating each item; returns `(instances, max posterior deviation)`
/// between MACE's output and the enumerator at MACE's own parameters.
pub fn mace_brute_force_check(per_shape: usize, seed: u64) -> (usize, f64) {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    let mut n = 0;
    for judges in 1..=3 {
        for items in 1..=4 {
            for _ in 0..per_shape {
                let mut ratings = Vec::new();
                for i in 0..items {
                    for j in 0..judges {
                        ratings.push(rating(i, j, g.random_range(1..=5)));
                    }
                }
                let out = mace_aggregate(&ratings, &MaceConfig::default()).unwrap();
                let theta: Vec<f64> = out.profiles.iter().map(|p| p.competence).collect();
                let xi: Vec<[f64; 5]> = out.profiles.iter().map(|p| p.spam_distribution).collect();
                // Item and judge ids sort in index order, so indices line up.
                let obs: Vec<(usize, usize, usize)> = ratings
                    .iter()
                    .map(|r| {
                        let i: usize = r.dialogue_id[1..].parse().unwrap();
                        let j: usize = r.judge_id[1..].parse().unwrap();
                        (i, j, r.rating as usize - 1)
                    })
                    .collect();
                let bf = brute_force_posteriors(&obs, items, &theta, &xi);
                for (a, b) in out.posteriors.iter().zip(&bf) {
                    for k in 0..5 {
                        worst = worst.max((a[k] - b[k]).abs());
                    }
                }
                n += 1;
            }
        }
    }
    (n, worst)
}

/// Judges copying the truth with probabilities `skills`, otherwise rating
/// uniformly at random.
pub fn skilled_panel(items: usize, skills: &[f64], seed: u64) -> Vec<TurnRating> {
    let mut g = rng(seed);
    let mut out = Vec::new();
    for i in 0..items {
        let truth: u8 = g.random_range(1..=5);
        for (j, &q) in skills.iter().enumerate() {
            let v = if g.random::<f64>() < q { truth } else { g.random_range(1..=5) };
            out.push(rating(i, j, v));
        }
    }
    out
}

/// Largest drop between consecutive objective values over every restart.
pub fn mace_max_decrease(ratings: &[TurnRating], cfg: &MaceConfig) -> f64 {
    let out = mace_aggregate(ratings, cfg).unwrap();
    out.restart_traces
        .iter()
        .flat_map(|t| t.windows(2).map(|w| w[0] - w[1]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `contexts` seeds, each continued by every system in `systems`.
pub fn selftalk_grid(contexts: usize, systems: &[System]) -> Vec<Dialogue> {
    let mut out = Vec::new();
    for c in 0..contexts {
        for &s in systems {
            out.push(Dialogue {
                dialogue_id: format!("{s}:ctx-{c}"),
                origin_system: s,
                seed: vec![Utterance::new(Speaker::A, format!("context number {c}"))],
                generated: vec![Utterance::new(Speaker::B, "ok")],
            });
        }
    }
    out
}

/// Checks every partition invariant for one configuration.
pub fn check_partition(contexts: usize, systems: &[System], k: usize, seed: u64) -> Result<(), String> {
    let d = selftalk_grid(contexts, systems);
    let plan = make_folds(&d, SplitMode::ConvoSplit, k, seed).map_err(|e| e.to_string())?;
    if plan.k() != k {
        return Err(format!("{} folds", plan.k()));
    }
    let mut seen = BTreeSet::new();
    for f in &plan.folds {
        for id in f {
            if !seen.insert(id.clone()) {
                return Err(format!("{id} in two folds"));
            }
        }
    }
    if seen.len() != d.len() {
        return Err("not every dialogue placed".into());
    }
    let fold_of = plan.fold_of();
    let mut ctx_fold: BTreeMap<String, usize> = BTreeMap::new();
    for x in &d {
        let f = fold_of[x.dialogue_id.as_str()];
        if *ctx_fold.entry(x.seed_key()).or_insert(f) != f {
            return Err(format!("context of {} split across folds", x.dialogue_id));
        }
    }
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if hi - lo > systems.len() {
        return Err(format!("unbalanced folds {sizes:?}"));
    }
    let again = make_folds(&d, SplitMode::ConvoSplit, k, seed).unwrap();
    if again != plan {
        return Err("not deterministic".into());
    }
    let sys = make_folds(&d, SplitMode::SystemSplit, systems.len().max(2), seed);
    if systems.len() >= 2 {
        let sys = sys.map_err(|e| e.to_string())?;
        for (f, s) in sys.folds.iter().zip(&sys.fold_systems) {
            if f.len() != contexts || !f.iter().all(|id| id.starts_with(&format!("{s}:"))) {
                return Err(format!("system fold {s} is impure"));
            }
        }
    }
    Ok(())
}

/// 200 random configurations; returns the failures.
pub fn random_partition_failures(seed: u64) -> Vec<String> {
    let mut g = rng(seed);
    let mut out = Vec::new();
    for _ in 0..200 {
        let k = g.random_range(2..=12);
        let contexts = g.random_range(k..=60);
        let n_sys = g.random_range(1..=5);
        let systems = &System::GENERATIVE[..n_sys];
        let s = g.random::<u64>();
        if let Err(e) = check_partition(contexts, systems, k, s) {
            out.push(format!("contexts {contexts} systems {n_sys} k {k}: {e}"));
        }
    }
    out
}


/// Exact `∇ E[R]` of a softmax bandit: `Σ_a p_a R_a (e_a − p)`.
pub fn exact_bandit_gradient(logits: &[f64], rewards: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|x| x / z).collect();
    (0..p.len())
        .map(|i| (0..p.len()).map(|a| p[a] * rewards[a] * (f64::from(u8::from(a == i)) - p[i])).sum())
        .collect()
}

/// Two-action bandit rewarding action 0 only, trained with plain SGD on
/// sampled single-episode batches; returns the final `P(action 0)` and what
/// exact-gradient ascent reaches with the same step size.
pub fn bandit_convergence(updates: usize, lr: f64, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let mut state =
        PolicyState::new(SoftmaxBandit::<f64>::new(vec![0.0, 0.0]), PgOptimizer::Sgd { lr }, 1, None).unwrap();
    let reward = |a: usize| if a == 0 { 1.0 } else { 0.0 };
    for _ in 0..updates {
        let ep = state.policy.rollout(&mut g, reward);
        policy_gradient_update(&mut state, &[ep]).unwrap();
    }
    let mut l = vec![0.0, 0.0];
    for _ in 0..updates {
        let grad = exact_bandit_gradient(&l, &[1.0, 0.0]);
        for (x, d) in l.iter_mut().zip(grad) {
            *x += lr * d;
        }
    }
    let exact_p0 = 1.0 / (1.0 + (l[1] - l[0]).exp());
    (state.policy.probs()[0], exact_p0)
}

/// Per-coordinate `(mean, standard error)` of single-episode gradient
/// estimates over `n` episodes, using `baseline`.
pub fn bandit_gradient_stats(
    logits: &[f64],
    rewards: &[f64],
    baseline: f64,
    n: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut g = rng(seed);
    let bandit = SoftmaxBandit::<f64>::new(logits.to_vec());
    let k = logits.len();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for _ in 0..n {
        let ep = bandit.rollout(&mut g, |a| rewards[a]);
        let grad = policy_gradient(&bandit, &[ep], baseline).unwrap();
        for (i, v) in grad.tensors()[0].data.iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let nf = n as f64;
    (0..k)
        .map(|i| {
            let mean = sum[i] / nf;
            let var = (sq[i] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            (mean, (var / nf).sqrt())
        })
        .collect()
}

/// Largest |estimate − exact| in units of the estimate's standard error.
pub fn bandit_gradient_z(baseline: f64, n: usize, seed: u64) -> f64 {
    let logits = [0.4, -0.3, 0.1];
    let rewards = [1.0, 0.2, -0.5];
    let exact = exact_bandit_gradient(&logits, &rewards);
    bandit_gradient_stats(&logits, &rewards, baseline, n, seed)
        .iter()
        .zip(&exact)
        .map(|((m, se), e)| (m - e).abs() / se)
        .fold(0.0, f64::max)
}

/// Difference between the mean gradients with and without a constant
/// baseline, in standard errors of the difference. Episodes are drawn
/// independently for the two estimates.
pub fn bandit_baseline_z(baseline: f64, n: usize, seed: u64) -> f64 {
    let logits = [0.4, -0.3, 0.1];
    let rewards = [1.0, 0.2, -0.5];
    let a = bandit_gradient_stats(&logits, &rewards, 0.0, n, seed);
    let b = bandit_gradient_stats(&logits, &rewards, baseline, n, seed ^ 0x5eed);
    a.iter()
        .zip(&b)
        .map(|((ma, sa), (mb, sb))| (ma - mb).abs() / (sa * sa + sb * sb).sqrt())
        .fold(0.0, f64::max)
}
