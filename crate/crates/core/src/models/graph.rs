//! Tape-level building blocks shared by training, scoring and generation.

use super::{Architecture, ModelParams};
use crate::autodiff::{Tape, Var};
use crate::corpus::vocab::{EOS, SOS};
use crate::params::Bound;
use crate::scalar::Scalar;

/// A tape with a model's weights bound as trainable leaves.
pub struct Graph<'a, T: Scalar> {
    pub tape: Tape<'a, T>,
    pub params: &'a ModelParams<T>,
    bound: Bound,
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        let mut tape = Tape::new();
        let bound = params.weights.bind(&mut tape);
        Graph { tape, params, bound }
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    pub fn p(&self, name: &str) -> Var {
        let i = self
            .params
            .weights
            .position(name)
            .unwrap_or_else(|| panic!("{} model has no tensor '{name}'", self.params.architecture));
        self.bound.var(i)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.tape.constant(vec![T::zero(); n])
    }

    pub fn embed(&mut self, id: u32) -> Var {
        let e = self.p("embedding");
        self.tape.row(e, id as usize)
    }

    /// One LSTM step; returns `(h, c)`.
    pub fn lstm_step(&mut self, prefix: &str, x: Var, h: Var, c: Var) -> (Var, Var) {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        let xh = self.tape.concat(&[x, h]);
        let gates = self.tape.affine(w, xh, b);
        let hc = self.tape.lstm(gates, c);
        let n = self.tape.value(c).len();
        (self.tape.slice(hc, 0, n), self.tape.slice(hc, n, n))
    }

    /// Final hidden state after running `inputs` through the LSTM `prefix`
    /// from a zero state.
    pub fn run_lstm(&mut self, prefix: &str, inputs: &[Var], hidden: usize) -> Var {
        let mut h = self.zeros(hidden);
        let mut c = self.zeros(hidden);
        for &x in inputs {
            (h, c) = self.lstm_step(prefix, x, h, c);
        }
        h
    }

    /// Turn encoding: final forward state, concatenated with the final
    /// backward state when the encoder is bidirectional.
    pub fn encode_turn(&mut self, ids: &[u32]) -> Var {
        let cfg = self.params.config;
        let embs: Vec<Var> = ids.iter().map(|&i| self.embed(i)).collect();
        let fwd = self.run_lstm("turn_fwd", &embs, cfg.turn_encoder_units);
        if !cfg.bidirectional_turn_encoder {
            return fwd;
        }
        let rev: Vec<Var> = embs.iter().rev().copied().collect();
        let bwd = self.run_lstm("turn_bwd", &rev, cfg.turn_encoder_units);
        self.tape.concat(&[fwd, bwd])
    }

    /// Context encoding. Seq2Seq sees only the last turn.
    pub fn encode_context(&mut self, turns: &[Vec<u32>]) -> Var {
        if self.params.architecture == Architecture::Seq2seq {
            let last = turns.last().map(Vec::as_slice).unwrap_or(&[EOS]);
            return self.encode_turn(last);
        }
        let encs: Vec<Var> = turns.iter().map(|t| self.encode_turn(t)).collect();
        let hc = self.params.config.context_encoder_units;
        self.run_lstm("context", &encs, hc)
    }

    pub fn encode_coarse_context(&mut self, turns: &[Vec<u32>]) -> Var {
        let ht = self.params.config.turn_encoder_units;
        let hc = self.params.config.context_encoder_units;
        let encs: Vec<Var> = turns.iter().map(|t| self.encode_coarse_turn(t, ht)).collect();
        self.run_lstm("coarse_context", &encs, hc)
    }

    pub fn encode_coarse_turn(&mut self, ids: &[u32], ht: usize) -> Var {
        let embs: Vec<Var> = ids.iter().map(|&i| self.embed(i)).collect();
        self.run_lstm("coarse_turn", &embs, ht)
    }

    /// Decoder start state `tanh(W cond + b)` with a zero cell.
    pub fn decoder_start(&mut self, prefix: &str, cond: Var) -> (Var, Var) {
        let w = self.p(&format!("{prefix}_init.w"));
        let b = self.p(&format!("{prefix}_init.b"));
        let pre = self.tape.affine(w, cond, b);
        let h = self.tape.tanh(pre);
        let c = self.zeros(self.params.config.decoder_units);
        (h, c)
    }

    /// One decoder step fed with `prev`; returns the next state and logits.
    pub fn decoder_step(
        &mut self,
        lstm: &str,
        output: &str,
        prev: u32,
        h: Var,
        c: Var,
    ) -> (Var, Var, Var) {
        let x = self.embed(prev);
        let (h, c) = self.lstm_step(lstm, x, h, c);
        let w = self.p(&format!("{output}.w"));
        let b = self.p(&format!("{output}.b"));
        let logits = self.tape.affine(w, h, b);
        (h, c, logits)
    }

    /// Summed token NLL of `target` (which ends in EOS) under teacher forcing.
    pub fn decoder_nll(&mut self, coarse: bool, cond: Var, target: &[u32]) -> Var {
        let (init, lstm, output) = if coarse {
            ("coarse_dec", "coarse_decoder", "coarse_output")
        } else {
            ("dec", "decoder", "output")
        };
        let (mut h, mut c) = self.decoder_start(init, cond);
        let mut prev = SOS;
        let mut terms = Vec::with_capacity(target.len());
        for &t in target {
            let (h2, c2, logits) = self.decoder_step(lstm, output, prev, h, c);
            h = h2;
            c = c2;
            terms.push(self.tape.cross_entropy(logits, t as usize));
            prev = t;
        }
        let stacked = self.tape.concat(&terms);
        self.tape.sum(stacked)
    }

    /// Gaussian parameters `(mu, logvar)` from a linear head.
    pub fn gaussian(&mut self, head: &str, input: Var) -> (Var, Var) {
        let w = self.p(&format!("{head}.w"));
        let b = self.p(&format!("{head}.b"));
        let out = self.tape.affine(w, input, b);
        let d = self.params.config.latent_dim;
        (self.tape.slice(out, 0, d), self.tape.slice(out, d, d))
    }

    /// `KL(N(mu_q, exp lv_q) || N(mu_p, exp lv_p))` summed over dimensions.
    pub fn kl(&mut self, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Var {
        let t = &mut self.tape;
        let dv = t.sub(lv_q, lv_p);
        let ratio = t.exp(dv);
        let dm = t.sub(mu_q, mu_p);
        let dm2 = t.mul(dm, dm);
        let neg_lvp = t.scale(lv_p, -T::one());
        let inv_vp = t.exp(neg_lvp);
        let maha = t.mul(dm2, inv_vp);
        let a = t.add(ratio, maha);
        let b = t.sub(a, dv);
        let s = t.sum(b);
        let n = T::of(self.tape.value(mu_q).len() as f64);
        let s = self.tape.scale(s, T::of(0.5));
        let half_n = self.tape.scalar(-T::of(0.5) * n);
        self.tape.add(s, half_n)
    }

    /// `mu + exp(lv / 2) * eps`
    pub fn reparameterize(&mut self, mu: Var, lv: Var, eps: &[T]) -> Var {
        let half = self.tape.scale(lv, T::of(0.5));
        let sd = self.tape.exp(half);
        let e = self.tape.constant(eps.to_vec());
        let noise = self.tape.mul(sd, e);
        self.tape.add(mu, noise)
    }

    /// Dual-encoder logit `c^T M r`.
    pub fn de_logit(&mut self, ctx: Var, resp: Var) -> Var {
        let m = self.p("response_proj.w");
        let mr = self.tape.matvec(m, resp);
        self.tape.dot(ctx, mr)
    }
}
