use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::Dialogue;
use crate::error::{Error, Result};
use crate::models::generate::response_nll;
use crate::models::graph::Graph;
use crate::models::{Architecture, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Step<C, R> {
    pub context: C,
    pub response: R,
    pub logprob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<C, R> {
    pub dialogue: Option<Dialogue>,
    steps: Vec<Step<C, R>>,
    ret: f64,
}

impl<C, R> Episode<C, R> {
    /// The return is the undiscounted sum of the step rewards.
    pub fn new(dialogue: Option<Dialogue>, steps: Vec<Step<C, R>>) -> Self {
        let ret = steps.iter().map(|s| s.reward).sum();
        Episode { dialogue, steps, ret }
    }

    pub fn steps(&self) -> &[Step<C, R>] {
        &self.steps
    }

    pub fn ret(&self) -> f64 {
        self.ret
    }
}

/// Something with differentiable log-probabilities over its own actions.
pub trait Policy<T: Scalar> {
    type Context;
    type Response;

    fn weights(&self) -> &ParamSet<T>;
    fn weights_mut(&mut self) -> &mut ParamSet<T>;
    /// `Σ_i ∇ log p(r_i | c_i)` over `steps`.
    fn score_function(&self, steps: &[Step<Self::Context, Self::Response>]) -> Result<ParamSet<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PgOptimizer {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

/// Mean of the most recent returns. Computed before a batch is added, so it
/// never depends on the actions it is subtracted from.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingBaseline {
    pub window: usize,
    history: VecDeque<f64>,
}

impl MovingBaseline {
    pub fn new(window: usize) -> Self {
        MovingBaseline {
            window: window.max(1),
            history: VecDeque::new(),
        }
    }

    pub fn value(&self) -> f64 {
        if self.history.is_empty() {
            0.0
        } else {
            self.history.iter().sum::<f64>() / self.history.len() as f64
        }
    }

    pub fn push(&mut self, ret: f64) {
        self.history.push_back(ret);
        while self.history.len() > self.window {
            self.history.pop_front();
        }
    }
}

enum OptState<T> {
    Sgd(f64),
    Adam(Adam<T>),
}

pub struct PolicyState<T, P> {
    pub policy: P,
    pub episode_batch_size: usize,
    pub baseline: Option<MovingBaseline>,
    pub updates: usize,
    opt: OptState<T>,
}

impl<T: Scalar, P: Policy<T>> PolicyState<T, P> {
    pub fn new(policy: P, optimizer: PgOptimizer, episode_batch_size: usize, baseline: Option<MovingBaseline>) -> Result<Self> {
        if episode_batch_size == 0 {
            return Err(Error::InvalidArgument("episode_batch_size must be at least 1".into()));
        }
        let opt = match optimizer {
            PgOptimizer::Sgd { lr } => OptState::Sgd(lr),
            PgOptimizer::Adam { lr } => OptState::Adam(Adam::new(AdamConfig::with_lr(lr), policy.weights())),
        };
        Ok(PolicyState {
            policy,
            episode_batch_size,
            baseline,
            updates: 0,
            opt,
        })
    }
}

/// `(1/B) Σ_e (Σ_i ∇ log p(r_i | c_i)) · (return_e − baseline)`.
pub fn policy_gradient<T: Scalar, P: Policy<T>>(
    policy: &P,
    episodes: &[Episode<P::Context, P::Response>],
    baseline: f64,
) -> Result<ParamSet<T>> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("empty episode batch".into()));
    }
    let mut g = policy.weights().zeros_like();
    let inv_b = 1.0 / episodes.len() as f64;
    for ep in episodes {
        let adv = ep.ret() - baseline;
        if adv == 0.0 {
            continue;
        }
        let s = policy.score_function(ep.steps())?;
        let w = T::of(adv * inv_b);
        for (acc, t) in g.tensors_mut().iter_mut().zip(s.tensors()) {
            crate::scalar::axpy(w, &t.data, &mut acc.data);
        }
    }
    Ok(g)
}

/// One ascent step on the batch; returns the gradient that was applied.
pub fn policy_gradient_update<T: Scalar, P: Policy<T>>(
    state: &mut PolicyState<T, P>,
    episodes: &[Episode<P::Context, P::Response>],
) -> Result<ParamSet<T>> {
    let b = state.baseline.as_ref().map_or(0.0, MovingBaseline::value);
    let g = policy_gradient(&state.policy, episodes, b)?;
    if !g.all_finite() {
        return Err(Error::NonFinite {
            epoch: 0,
            step: state.updates,
            detail: "policy gradient".into(),
        });
    }
    match &mut state.opt {
        OptState::Sgd(lr) => {
            let lr = T::of(*lr);
            for (w, t) in state.policy.weights_mut().tensors_mut().iter_mut().zip(g.tensors()) {
                crate::scalar::axpy(lr, &t.data, &mut w.data);
            }
        }
        OptState::Adam(adam) => {
            let mut neg = g.clone();
            for t in neg.tensors_mut() {
                for v in &mut t.data {
                    *v = -*v;
                }
            }
            adam.step(state.policy.weights_mut(), &neg);
        }
    }
    if let Some(bl) = &mut state.baseline {
        for ep in episodes {
            bl.push(ep.ret());
        }
    }
    state.updates += 1;
    Ok(g)
}

/// Softmax over a vector of logits; actions are indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxBandit<T> {
    weights: ParamSet<T>,
}

impl<T: Scalar> SoftmaxBandit<T> {
    pub fn new(logits: Vec<T>) -> Self {
        let mut weights = ParamSet::new();
        weights.insert("logits", Tensor::vector(logits));
        SoftmaxBandit { weights }
    }

    pub fn logits(&self) -> &[T] {
        &self.weights.tensors()[0].data
    }

    pub fn probs(&self) -> Vec<f64> {
        let l: Vec<f64> = self.logits().iter().map(|x| x.as_f64()).collect();
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// One single-step episode per draw, rewarded by `reward(action)`.
    pub fn rollout<R: Rng + ?Sized>(&self, rng: &mut R, reward: impl Fn(usize) -> f64) -> Episode<(), usize> {
        let a = self.sample(rng);
        let logprob = self.probs()[a].ln();
        Episode::new(
            None,
            vec![Step {
                context: (),
                response: a,
                logprob,
                reward: reward(a),
            }],
        )
    }
}

impl<T: Scalar> Policy<T> for SoftmaxBandit<T> {
    type Context = ();
    type Response = usize;

    fn weights(&self) -> &ParamSet<T> {
        &self.weights
    }

    fn weights_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.weights
    }

    fn score_function(&self, steps: &[Step<(), usize>]) -> Result<ParamSet<T>> {
        let p = self.probs();
        let mut g = vec![0.0; p.len()];
        for s in steps {
            if s.response >= p.len() {
                return Err(Error::InvalidArgument(format!("action {} out of range", s.response)));
            }
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += f64::from(u8::from(i == s.response)) - p[i];
            }
        }
        let mut out = ParamSet::new();
        out.insert("logits", Tensor::vector(g.into_iter().map(T::of).collect()));
        Ok(out)
    }
}

/// Token-level dialogue policy over a Seq2Seq or HRED model.
#[derive(Debug, Clone)]
pub struct DialoguePolicy<T> {
    pub params: ModelParams<T>,
}

impl<T: Scalar> DialoguePolicy<T> {
    pub fn new(params: ModelParams<T>) -> Result<Self> {
        match params.architecture {
            Architecture::Seq2seq | Architecture::Hred => Ok(DialoguePolicy { params }),
            a => Err(Error::Architecture(format!("{a} cannot be trained by policy gradient"))),
        }
    }

    /// `log p(response | context)` with EOS appended to the response.
    pub fn log_prob(&self, context: &[Vec<u32>], response: &[u32]) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let nll = response_nll(&mut g, context, response)?;
        Ok(-g.tape.scalar_value(nll).as_f64())
    }
}

impl<T: Scalar> Policy<T> for DialoguePolicy<T> {
    type Context = Vec<Vec<u32>>;
    type Response = Vec<u32>;

    fn weights(&self) -> &ParamSet<T> {
        &self.params.weights
    }

    fn weights_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params.weights
    }

    fn score_function(&self, steps: &[Step<Vec<Vec<u32>>, Vec<u32>>]) -> Result<ParamSet<T>> {
        let mut g = Graph::new(&self.params);
        let mut terms = Vec::with_capacity(steps.len());
        for s in steps {
            terms.push(response_nll(&mut g, &s.context, &s.response)?);
        }
        let mut acc = self.params.weights.zeros_like();
        if terms.is_empty() {
            return Ok(acc);
        }
        let total = g.tape.add_n(&terms);
        let neg = g.tape.scale(total, -T::one());
        let grads = g.tape.backward(neg);
        g.bound().accumulate(&grads, &mut acc);
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_is_the_reward_sum() {
        let steps: Vec<Step<(), usize>> = [0.5, 1.25, -0.75]
            .iter()
            .map(|&r| Step {
                context: (),
                response: 0,
                logprob: 0.0,
                reward: r,
            })
            .collect();
        assert_eq!(Episode::new(None, steps).ret(), 0.5 + 1.25 - 0.75);
    }

    #[test]
    fn zero_returns_give_zero_update() {
        let b = SoftmaxBandit::new(vec![0.3f64, -0.2]);
        let eps = vec![Episode::new(
            None,
            vec![Step {
                context: (),
                response: 1,
                logprob: 0.0,
                reward: 0.0,
            }],
        )];
        let mut st = PolicyState::new(b.clone(), PgOptimizer::Sgd { lr: 0.5 }, 1, None).unwrap();
        policy_gradient_update(&mut st, &eps).unwrap();
        assert_eq!(st.policy.logits(), b.logits());
        assert!(policy_gradient_update(&mut st, &[]).is_err());
    }

    #[test]
    fn single_step_update_follows_the_score_function() {
        let b = SoftmaxBandit::new(vec![0.1f64, 0.4, -0.3]);
        let ep = Episode::new(
            None,
            vec![Step {
                context: (),
                response: 2,
                logprob: 0.0,
                reward: 1.0,
            }],
        );
        let s = b.score_function(ep.steps()).unwrap();
        let mut st = PolicyState::new(b.clone(), PgOptimizer::Sgd { lr: 1.0 }, 1, None).unwrap();
        policy_gradient_update(&mut st, std::slice::from_ref(&ep)).unwrap();
        for i in 0..3 {
            let moved = st.policy.logits()[i] - b.logits()[i];
            assert!((moved - s.tensors()[0].data[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn baseline_trails_returns() {
        let mut bl = MovingBaseline::new(2);
        assert_eq!(bl.value(), 0.0);
        for r in [1.0, 2.0, 4.0] {
            bl.push(r);
        }
        assert_eq!(bl.value(), 3.0);
    }
}
