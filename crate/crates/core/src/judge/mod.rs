//! The trained dialogue metric: `score(c, r) = (cᵀMr − α) / β` over frozen
//! context and response encoders.

pub mod augment;
pub mod cv;
pub mod encoder;
pub mod folds;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamSet;
use crate::scalar::{self, Scalar};
use crate::tensor::Tensor;

pub use augment::{augment_negatives, NegativeKind};
pub use cv::{evaluate_cv, CorrelationReport, FoldResult, HeldOutPrediction};
pub use encoder::{EncodedData, JudgeEncoder};
pub use folds::{make_folds, FoldPlan, SplitMode};

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 32.0;
pub const M_INIT_BOUND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Append a constant 1 to both encodings so M also holds linear and
    /// constant terms.
    pub bias: bool,
    /// Train α and β alongside M.
    pub learn_scale: bool,
    /// Pass both encodings through a learned `tanh(W x + b)` first.
    pub nonlinear: bool,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            bias: true,
            learn_scale: false,
            nonlinear: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop once the training MSE has not improved by `plateau_tol` for
    /// `patience` epochs; 0 disables early stopping.
    pub patience: usize,
    pub plateau_tol: f64,
    pub seed: u64,
}

impl Default for JudgeHyper {
    fn default() -> Self {
        JudgeHyper {
            lr: 0.001,
            batch_size: 512,
            epochs: 100,
            patience: 10,
            plateau_tol: 1e-4,
            seed: 0,
        }
    }
}

/// Identifies the frozen encoder weights a judge was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderRef {
    pub source: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct JudgeModel<T> {
    pub config: JudgeConfig,
    pub context_dim: usize,
    pub response_dim: usize,
    pub encoder: EncoderRef,
    /// `m`, `alpha`, `inv_beta`, and with `nonlinear` also
    /// `transform_c.{w,b}` and `transform_r.{w,b}`.
    pub weights: ParamSet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeEpoch {
    pub epoch: usize,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct JudgeTraining<T> {
    pub model: JudgeModel<T>,
    pub initial_mse: f64,
    pub log: Vec<JudgeEpoch>,
}

impl<T: Scalar> JudgeModel<T> {
    pub fn new(context_dim: usize, response_dim: usize, config: JudgeConfig, encoder: EncoderRef, seed: u64) -> Result<Self> {
        if context_dim == 0 || response_dim == 0 {
            return Err(Error::InvalidArgument("encoding dimensions must be at least 1".into()));
        }
        if config.beta == 0.0 || !config.beta.is_finite() || !config.alpha.is_finite() {
            return Err(Error::InvalidArgument("beta must be finite and non-zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = usize::from(config.bias);
        let mut w = ParamSet::new();
        w.insert(
            "m",
            Tensor::uniform(context_dim + extra, response_dim + extra, M_INIT_BOUND, &mut rng),
        );
        w.insert("alpha", Tensor::vector(vec![T::of(config.alpha)]));
        w.insert("inv_beta", Tensor::vector(vec![T::of(1.0 / config.beta)]));
        if config.nonlinear {
            w.insert("transform_c.w", Tensor::identity(context_dim));
            w.insert("transform_c.b", Tensor::zeros(context_dim, 1));
            w.insert("transform_r.w", Tensor::identity(response_dim));
            w.insert("transform_r.b", Tensor::zeros(response_dim, 1));
        }
        Ok(JudgeModel {
            config,
            context_dim,
            response_dim,
            encoder,
            weights: w,
        })
    }

    /// Judge with an explicit similarity matrix and no bias coordinate.
    pub fn from_matrix(m: Tensor<T>, alpha: f64, beta: f64, encoder: EncoderRef) -> Result<Self> {
        let config = JudgeConfig {
            alpha,
            beta,
            bias: false,
            ..JudgeConfig::default()
        };
        let mut j = Self::new(m.rows, m.cols, config, encoder, 0)?;
        *j.weights.get_mut("m").expect("m") = m;
        Ok(j)
    }

    pub fn m(&self) -> &Tensor<T> {
        self.weights.get("m").expect("judge has m")
    }

    pub fn alpha(&self) -> T {
        self.weights.get("alpha").expect("alpha").data[0]
    }

    pub fn beta(&self) -> T {
        T::one() / self.weights.get("inv_beta").expect("inv_beta").data[0]
    }

    /// Hash of `m` alone; the encoders are hashed separately.
    pub fn m_hash(&self) -> String {
        self.weights.hash_where(|n| n == "m")
    }

    fn check_dims(&self, c: &[T], r: &[T]) -> Result<()> {
        if c.len() != self.context_dim || r.len() != self.response_dim {
            return Err(Error::Shape(format!(
                "judge expects {}/{} dims, got {}/{}",
                self.context_dim,
                self.response_dim,
                c.len(),
                r.len()
            )));
        }
        Ok(())
    }

    fn features(&self, c: &[T], prefix: &str) -> Vec<T> {
        let mut x = if self.config.nonlinear {
            let w = self.weights.get(&format!("{prefix}.w")).expect("transform");
            let b = self.weights.get(&format!("{prefix}.b")).expect("transform");
            w.matvec(c).iter().zip(&b.data).map(|(v, b)| (*v + *b).tanh()).collect()
        } else {
            c.to_vec()
        };
        if self.config.bias {
            x.push(T::one());
        }
        x
    }

    /// Raw score `(cᵀMr − α) / β` of precomputed encodings.
    pub fn score_encoded(&self, c: &[T], r: &[T]) -> Result<T> {
        self.check_dims(c, r)?;
        let cf = self.features(c, "transform_c");
        let rf = self.features(r, "transform_r");
        let mr = self.m().matvec(&rf);
        Ok((scalar::dot(&cf, &mr) - self.alpha()) / self.beta())
    }

    /// Score clipped to the rating scale, for display and export only.
    pub fn score_clipped(&self, c: &[T], r: &[T]) -> Result<T> {
        Ok(self.score_encoded(c, r)?.max(T::one()).min(T::of(5.0)))
    }

    fn graph_features<'a>(&self, tape: &mut Tape<'a, T>, bound: &crate::params::Bound, x: &'a [T], prefix: &str) -> Var {
        let mut v = tape.constant_ref(x);
        if self.config.nonlinear {
            let w = bound.var(self.weights.position(&format!("{prefix}.w")).expect("transform"));
            let b = bound.var(self.weights.position(&format!("{prefix}.b")).expect("transform"));
            let a = tape.affine(w, v, b);
            v = tape.tanh(a);
        }
        if self.config.bias {
            let one = tape.scalar(T::one());
            v = tape.concat(&[v, one]);
        }
        v
    }

    /// Mean squared error over `idx` and its gradient. α and β get zero
    /// gradient unless `learn_scale` is set.
    pub fn mse_and_grad(&self, data: &EncodedData<T>, idx: &[usize]) -> (T, ParamSet<T>) {
        let mut tape = Tape::new();
        let bound = self.weights.bind(&mut tape);
        let m = bound.var(self.weights.position("m").expect("m"));
        let alpha = bound.var(self.weights.position("alpha").expect("alpha"));
        let inv_beta = bound.var(self.weights.position("inv_beta").expect("inv_beta"));
        let mut sq = Vec::with_capacity(idx.len());
        for &i in idx {
            let c = self.graph_features(&mut tape, &bound, &data.c[i], "transform_c");
            let r = self.graph_features(&mut tape, &bound, &data.r[i], "transform_r");
            let mr = tape.matvec(m, r);
            let s = tape.dot(c, mr);
            let shifted = tape.sub(s, alpha);
            let pred = tape.mul(shifted, inv_beta);
            let y = tape.scalar(data.y[i]);
            let d = tape.sub(pred, y);
            sq.push(tape.mul(d, d));
        }
        let total = tape.add_n(&sq);
        let loss = tape.scale(total, T::one() / T::of(idx.len() as f64));
        let grads = tape.backward(loss);
        let mut acc = self.weights.zeros_like();
        bound.accumulate(&grads, &mut acc);
        if !self.config.learn_scale {
            for name in ["alpha", "inv_beta"] {
                acc.get_mut(name).expect("scale").data.fill(T::zero());
            }
        }
        (tape.scalar_value(loss), acc)
    }

    pub fn mse(&self, data: &EncodedData<T>, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter()
            .map(|&i| {
                let p = self.score_encoded(&data.c[i], &data.r[i]).expect("dims checked").as_f64();
                let d = p - data.y[i].as_f64();
                d * d
            })
            .sum::<f64>()
            / idx.len() as f64
    }

    /// Sets the bias-bias entry of M so that, with the rest of M at zero,
    /// predictions equal `mean_label`.
    pub fn center_on(&mut self, mean_label: f64) {
        if !self.config.bias {
            return;
        }
        let target = T::of(mean_label) * self.beta() + self.alpha();
        let m = self.weights.get_mut("m").expect("m");
        let (r, c) = (m.rows, m.cols);
        m.set(r - 1, c - 1, target);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let j: Self = serde_json::from_slice(&bytes)?;
        if !j.weights.all_finite() {
            return Err(Error::Snapshot("judge holds non-finite weights".into()));
        }
        Ok(j)
    }
}

/// Adam on minibatches of precomputed encodings. Returns the parameters with
/// the lowest full-data MSE seen, so the result never fits worse than `j0`.
pub fn train_judge<T: Scalar>(
    data: &EncodedData<T>,
    idx: &[usize],
    j0: JudgeModel<T>,
    hyper: &JudgeHyper,
) -> Result<JudgeTraining<T>> {
    if idx.is_empty() {
        return Err(Error::NoData("no judge training examples".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    for &i in idx {
        let y = data.y[i].as_f64();
        if !(1.0..=5.0).contains(&y) {
            return Err(Error::InvalidArgument(format!("label {y} outside [1, 5]")));
        }
        j0.check_dims(&data.c[i], &data.r[i])?;
    }
    let mut model = j0;
    let mut adam = Adam::new(AdamConfig::with_lr(hyper.lr), &model.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order = idx.to_vec();
    let initial_mse = model.mse(data, idx);
    let mut best = (initial_mse, model.weights.clone());
    let mut log = Vec::with_capacity(hyper.epochs);
    let mut stale = 0usize;
    let mut plateau_ref = initial_mse;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let (loss, grads) = model.mse_and_grad(data, chunk);
            if !loss.as_f64().is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: adam.steps() as usize,
                    detail: "judge MSE".into(),
                });
            }
            adam.step(&mut model.weights, &grads);
        }
        let mse = model.mse(data, idx);
        if !mse.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                step: adam.steps() as usize,
                detail: "judge MSE after update".into(),
            });
        }
        log.push(JudgeEpoch { epoch, mse });
        if mse < best.0 {
            best = (mse, model.weights.clone());
        }
        if hyper.patience > 0 {
            if plateau_ref - mse > hyper.plateau_tol {
                plateau_ref = mse;
                stale = 0;
            } else {
                stale += 1;
                if stale >= hyper.patience {
                    break;
                }
            }
        }
    }
    model.weights = best.1;
    Ok(JudgeTraining {
        model,
        initial_mse,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eref() -> EncoderRef {
        EncoderRef {
            source: "test".into(),
            hash: "h".into(),
        }
    }

    #[test]
    fn defaults_match_the_published_constants() {
        let j: JudgeModel<f64> = JudgeModel::new(3, 3, JudgeConfig::default(), eref(), 0).unwrap();
        assert_eq!(j.alpha(), 0.01);
        assert_eq!(j.beta(), 32.0);
    }

    #[test]
    fn zero_context_gives_minus_alpha_over_beta() {
        let m = Tensor::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let j = JudgeModel::from_matrix(m, DEFAULT_ALPHA, DEFAULT_BETA, eref()).unwrap();
        let s = j.score_encoded(&[0.0, 0.0], &[0.3, 0.9]).unwrap();
        assert!((s + 3.125e-4).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_bilinear_form() {
        let m = Tensor::from_vec(2, 2, vec![0.0f64, 2.0, 0.0, 0.0]);
        let j = JudgeModel::from_matrix(m, 0.0, 1.0, eref()).unwrap();
        assert_eq!(j.score_encoded(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(j.score_encoded(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn centering_makes_predictions_the_label_mean() {
        let mut j: JudgeModel<f64> = JudgeModel::new(2, 2, JudgeConfig::default(), eref(), 0).unwrap();
        j.weights.get_mut("m").unwrap().data.fill(0.0);
        j.center_on(3.2);
        let s = j.score_encoded(&[0.5, -1.0], &[2.0, 0.1]).unwrap();
        assert!((s - 3.2).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_leaves_m_unchanged() {
        let data = EncodedData {
            c: vec![vec![0.2, -0.1], vec![0.4, 0.3]],
            r: vec![vec![0.1, 0.5], vec![-0.2, 0.3]],
            y: vec![0.0, 0.0],
        };
        let mut j: JudgeModel<f64> = JudgeModel::new(2, 2, JudgeConfig::default(), eref(), 3).unwrap();
        j.center_on(2.5);
        let data = EncodedData {
            y: (0..2).map(|i| j.score_encoded(&data.c[i], &data.r[i]).unwrap()).collect(),
            ..data
        };
        let before = j.m().clone();
        let hyper = JudgeHyper {
            epochs: 5,
            ..Default::default()
        };
        let t = train_judge(&data, &[0, 1], j, &hyper).unwrap();
        for (a, b) in t.model.m().data.iter().zip(&before.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let j: JudgeModel<f32> = JudgeModel::new(3, 4, JudgeConfig { nonlinear: true, ..Default::default() }, eref(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("judge.json");
        j.save(&p).unwrap();
        assert_eq!(JudgeModel::<f32>::load(&p).unwrap(), j);
    }
}
