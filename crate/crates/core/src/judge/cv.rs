use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::encoder::EncodedData;
use super::folds::FoldPlan;
use super::{train_judge, EncoderRef, JudgeConfig, JudgeHyper, JudgeModel};
use crate::annotation::dataset::AggregatedRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;

/// Fewer held-out points than this leave the correlations absent.
pub const MIN_EVAL_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub fold: usize,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub prediction: f64,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Producing system for system splits, otherwise the fold number.
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mae: Option<f64>,
    pub train_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mode: String,
    pub folds: Vec<FoldResult>,
    pub mean_pearson: Option<f64>,
    pub mean_spearman: Option<f64>,
    pub mean_mae: Option<f64>,
    /// Correlations over all held-out predictions pooled together.
    pub pooled_pearson: Option<f64>,
    pub pooled_spearman: Option<f64>,
    pub predictions: Vec<HeldOutPrediction>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

impl CorrelationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} cross-validation", self.mode);
        let _ = writeln!(s, "{:<10} {:>7} {:>6} {:>8} {:>8} {:>7}", "fold", "train", "test", "pearson", "spearman", "mae");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:<10} {:>7} {:>6} {:>8} {:>8} {:>7}",
                f.name,
                f.n_train,
                f.n_test,
                fmt_opt(f.pearson),
                fmt_opt(f.spearman),
                fmt_opt(f.mae)
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>6} {:>8} {:>8} {:>7}",
            "mean",
            "",
            "",
            fmt_opt(self.mean_pearson),
            fmt_opt(self.mean_spearman),
            fmt_opt(self.mean_mae)
        );
        let _ = writeln!(
            s,
            "pooled pearson {} spearman {}",
            fmt_opt(self.pooled_pearson),
            fmt_opt(self.pooled_spearman)
        );
        s
    }
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    stats::mean(&v)
}

/// Trains a fresh judge per fold on every other fold, synthetic negatives
/// included, and scores the fold's rated records. `data` must be aligned
/// with `records`.
pub fn evaluate_cv<T: Scalar>(
    records: &[AggregatedRecord],
    data: &EncodedData<T>,
    plan: &FoldPlan,
    config: JudgeConfig,
    hyper: &JudgeHyper,
    encoder: &EncoderRef,
) -> Result<CorrelationReport> {
    if records.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} records but {} encodings",
            records.len(),
            data.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::NoData("no records to cross-validate".into()));
    }
    let fold_of = plan.fold_of();
    let mut assignment = Vec::with_capacity(records.len());
    for r in records {
        let k = fold_of.get(r.dialogue_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("dialogue '{}' is in no fold", r.dialogue_id))
        })?;
        assignment.push(*k);
    }
    let (dc, dr) = (data.c[0].len(), data.r[0].len());
    let mut folds = Vec::with_capacity(plan.k());
    let mut predictions = Vec::new();
    for k in 0..plan.k() {
        let train: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] != k).collect();
        let test: Vec<usize> = (0..records.len())
            .filter(|&i| assignment[i] == k && !records[i].synthetic)
            .collect();
        let name = plan
            .fold_systems
            .get(k)
            .map_or_else(|| format!("fold-{k}"), |s| s.as_str().to_string());
        if train.is_empty() {
            return Err(Error::NoData(format!("fold {name} leaves no training data")));
        }
        let mut j0 = JudgeModel::new(dc, dr, config, encoder.clone(), hyper.seed.wrapping_add(k as u64))?;
        let labels: Vec<f64> = train.iter().map(|&i| data.y[i].as_f64()).collect();
        j0.center_on(stats::mean(&labels).unwrap_or(3.0));
        let fit = train_judge(data, &train, j0, &JudgeHyper {
            seed: hyper.seed.wrapping_add(k as u64),
            ..*hyper
        })?;
        let train_mse = fit.model.mse(data, &train);
        let mut preds = Vec::with_capacity(test.len());
        for &i in &test {
            let p = fit.model.score_encoded(&data.c[i], &data.r[i])?.as_f64();
            preds.push(p);
            predictions.push(HeldOutPrediction {
                fold: k,
                dialogue_id: records[i].dialogue_id.clone(),
                turn_index: records[i].turn_index,
                prediction: p,
                label: records[i].label,
            });
        }
        let ys: Vec<f64> = test.iter().map(|&i| records[i].label).collect();
        let enough = test.len() >= MIN_EVAL_POINTS;
        folds.push(FoldResult {
            fold: k,
            name,
            n_train: train.len(),
            n_test: test.len(),
            pearson: enough.then(|| stats::pearson(&preds, &ys)).flatten(),
            spearman: enough.then(|| stats::spearman(&preds, &ys)).flatten(),
            mae: (!test.is_empty()).then(|| stats::mae(&preds, &ys)),
            train_mse,
        });
    }
    let (ps, ys): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.prediction, p.label)).unzip();
    Ok(CorrelationReport {
        mode: plan.mode.to_string(),
        mean_pearson: mean_of(folds.iter().map(|f| f.pearson)),
        mean_spearman: mean_of(folds.iter().map(|f| f.spearman)),
        mean_mae: mean_of(folds.iter().map(|f| f.mae)),
        pooled_pearson: stats::pearson(&ps, &ys),
        pooled_spearman: stats::spearman(&ps, &ys),
        folds,
        predictions,
    })
}
