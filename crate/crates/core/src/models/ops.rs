use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::{Architecture, ModelParams};
use crate::corpus::vocab::EOS;
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LatentSample<T> {
    pub mean: Vec<T>,
    pub log_variance: Vec<T>,
    pub sample: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms<T> {
    pub reconstruction: T,
    pub kl: T,
    pub latent: LatentSample<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<T> {
    pub context_encoding: Vec<T>,
    pub true_response_encoding: Vec<T>,
    pub negative_encodings: Vec<Vec<T>>,
}

fn check_turn<T: Scalar>(p: &ModelParams<T>, ids: &[u32]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("turn has no tokens, not even EOS".into()));
    }
    p.check_ids(ids)
}

fn check_target<T: Scalar>(p: &ModelParams<T>, target: &[u32]) -> Result<()> {
    check_turn(p, target)?;
    if target.last() != Some(&EOS) {
        return Err(Error::InvalidArgument("target must end with EOS".into()));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

pub fn encode_turn<T: Scalar>(p: &ModelParams<T>, ids: &[u32]) -> Result<Vec<T>> {
    check_turn(p, ids)?;
    let mut g = Graph::new(p);
    let v = g.encode_turn(ids);
    Ok(g.tape.value(v).to_vec())
}

pub fn encode_context<T: Scalar>(p: &ModelParams<T>, turns: &[Vec<u32>]) -> Result<Vec<T>> {
    if turns.is_empty() {
        return Err(Error::InvalidArgument("context has no turns".into()));
    }
    for t in turns {
        check_turn(p, t)?;
    }
    let mut g = Graph::new(p);
    let v = g.encode_context(turns);
    Ok(g.tape.value(v).to_vec())
}

/// Mean per-token NLL of `target` with the decoder started from `cond`.
pub fn reconstruction_loss<T: Scalar>(p: &ModelParams<T>, cond: &[T], target: &[u32]) -> Result<T> {
    if !p.architecture.is_generative() {
        return Err(Error::Architecture(format!("{} has no decoder", p.architecture)));
    }
    check_len("conditioning vector", cond.len(), p.conditioning_dim())?;
    check_target(p, target)?;
    let mut g = Graph::new(p);
    let c = g.tape.constant(cond.to_vec());
    let nll = g.decoder_nll(false, c, target);
    Ok(g.tape.scalar_value(nll) / T::of(target.len() as f64))
}

/// Closed-form KL divergence between diagonal Gaussians.
pub fn kl_diag_gaussian<T: Scalar>(mu_q: &[T], lv_q: &[T], mu_p: &[T], lv_p: &[T]) -> T {
    let half = T::of(0.5);
    (0..mu_q.len())
        .map(|i| {
            let d = mu_q[i] - mu_p[i];
            half * ((lv_q[i] - lv_p[i]).exp() + d * d / lv_p[i].exp() - (lv_q[i] - lv_p[i]) - T::one())
        })
        .sum()
}

/// Reconstruction (mean per-token NLL) and KL terms of the VHRED bound for
/// one response, drawing `z` from the posterior with noise `eps`.
pub fn elbo_terms<T: Scalar>(
    p: &ModelParams<T>,
    context: &[T],
    target: &[u32],
    eps: &[T],
) -> Result<ElboTerms<T>> {
    if p.architecture != Architecture::Vhred {
        return Err(Error::Architecture(format!(
            "ELBO terms need a VHRED model, got {}",
            p.architecture
        )));
    }
    check_len("context encoding", context.len(), p.context_dim())?;
    check_len("noise", eps.len(), p.config.latent_dim)?;
    check_target(p, target)?;
    let mut g = Graph::new(p);
    let ctx = g.tape.constant(context.to_vec());
    let r = g.encode_turn(target);
    let post_in = g.tape.concat(&[ctx, r]);
    let (mu_q, lv_q) = g.gaussian("posterior", post_in);
    let (mu_p, lv_p) = g.gaussian("prior", ctx);
    let kl = g.kl(mu_q, lv_q, mu_p, lv_p);
    let z = g.reparameterize(mu_q, lv_q, eps);
    let cond = g.tape.concat(&[ctx, z]);
    let nll = g.decoder_nll(false, cond, target);
    Ok(ElboTerms {
        reconstruction: g.tape.scalar_value(nll) / T::of(target.len() as f64),
        kl: g.tape.scalar_value(kl),
        latent: LatentSample {
            mean: g.tape.value(mu_q).to_vec(),
            log_variance: g.tape.value(lv_q).to_vec(),
            sample: g.tape.value(z).to_vec(),
        },
    })
}

/// `-[log σ(cᵀr) + Σ_n log σ(-cᵀr_n)]`
pub fn contrastive_loss<T: Scalar>(b: &ContrastiveBatch<T>) -> Result<T> {
    if b.negative_encodings.is_empty() {
        return Err(Error::InvalidArgument("contrastive loss needs at least one negative".into()));
    }
    let d = b.context_encoding.len();
    check_len("true response encoding", b.true_response_encoding.len(), d)?;
    for n in &b.negative_encodings {
        check_len("negative encoding", n.len(), d)?;
    }
    let c = &b.context_encoding;
    let mut loss = -scalar::log_sigmoid(scalar::dot(c, &b.true_response_encoding));
    for n in &b.negative_encodings {
        loss -= scalar::log_sigmoid(-scalar::dot(c, n));
    }
    Ok(loss)
}
