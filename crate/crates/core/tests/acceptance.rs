//! Acceptance harness: runs criteria 1-9 and prints PASS or FAIL for each
//! with the measured numbers. Numeric arguments restrict the run, e.g.
//! `cargo test --test acceptance -- 2 9`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context};
use autojudge::annotation::{mace_aggregate, MaceConfig};
use autojudge::corpus::System;
use autojudge::judge::{
    make_folds, train_judge, CorrelationReport, JudgeConfig, JudgeHyper, JudgeModel, NegativeKind, SplitMode,
    DEFAULT_ALPHA, DEFAULT_BETA,
};
use autojudge::pipeline::{
    run_all, run_stage, PipelineConfig, RerankReport, RlSummary, Stage, CV_REPORT, RERANK_REPORT, RL_SUMMARY,
};
use autojudge::stats;
use autojudge::tensor::Tensor;
use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> anyhow::Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn gradients() -> anyhow::Result<Verdict> {
    let t = Instant::now();
    let suite = gradient_suite();
    let elapsed = t.elapsed();
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for (name, c) in &suite {
        pass &= c.fraction() >= 0.95;
        parts.push(format!("{name} {}/{}", c.passing, c.coords));
    }
    verdict(pass, format!("{} in {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn bilinear() -> anyhow::Result<Verdict> {
    let mut g = rng(2);
    let mut worst: f64 = 0.0;
    for n in 0..1000 {
        let d = 1 + n % 9;
        let c = randn(&mut g, d);
        let r = randn(&mut g, d);
        let m = Tensor::from_vec(d, d, randn(&mut g, d * d));
        let oracle = (bilinear_double_loop(&c, &m, &r) - DEFAULT_ALPHA) / DEFAULT_BETA;
        let j = JudgeModel::from_matrix(m, DEFAULT_ALPHA, DEFAULT_BETA, eref())?;
        worst = worst.max((j.score_encoded(&c, &r)? - oracle).abs());
    }
    let cfg = JudgeConfig::default();
    let defaults = cfg.alpha == 0.01 && cfg.beta == 32.0;
    verdict(
        worst < 1e-6 && defaults,
        format!("max |score - double loop| {worst:.2e} over 1000; alpha {} beta {}", cfg.alpha, cfg.beta),
    )
}

fn mace() -> anyhow::Result<Verdict> {
    let mut drop: f64 = 0.0;
    for seed in 0..5 {
        let ratings = skilled_panel(40, &[0.8, 0.5, 0.2], seed);
        for smoothing in [0.0, 0.1, 1.0] {
            let cfg = MaceConfig {
                smoothing,
                restarts: 3,
                seed,
                ..Default::default()
            };
            drop = drop.max(mace_max_decrease(&ratings, &cfg));
        }
    }

    let mut unanimous = Vec::new();
    for i in 0..8 {
        for j in 0..3 {
            unanimous.push(rating(i, j, (i % 5) as u8 + 1));
        }
    }
    let out = mace_aggregate(&unanimous, &MaceConfig::default())?;
    let fixpoint = out.labels.iter().all(|l| {
        let i: usize = l.dialogue_id[1..].parse().unwrap_or(usize::MAX);
        l.label as usize == i % 5 + 1 && l.confidence > 0.99
    });

    let out = mace_aggregate(&skilled_panel(300, &[0.9, 0.6, 0.3], 7), &MaceConfig::default())?;
    let c: Vec<f64> = out.profiles.iter().map(|p| p.competence).collect();
    let ordered = c.len() == 3 && c[0] > c[1] && c[1] > c[2];

    let (instances, worst) = mace_brute_force_check(3, 11);
    verdict(
        drop <= 1e-9 && fixpoint && ordered && worst < 1e-3,
        format!(
            "max EM decrease {drop:.1e}; unanimity fixpoint {fixpoint}; competence {:.3}/{:.3}/{:.3}; \
             brute force {instances} instances, max deviation {worst:.1e}",
            c[0], c[1], c[2]
        ),
    )
}

fn folds() -> anyhow::Result<Verdict> {
    let d = selftalk_grid(100, &System::GENERATIVE);
    let plan = make_folds(&d, SplitMode::ConvoSplit, 10, 3)?;
    let sizes: Vec<usize> = plan.folds.iter().map(|f| f.len()).collect();
    let convo = d.len() == 500 && sizes.len() == 10 && sizes.iter().all(|&n| n == 50);

    let plan = make_folds(&d, SplitMode::SystemSplit, 5, 0)?;
    let system = plan.fold_systems == System::GENERATIVE
        && plan
            .folds
            .iter()
            .zip(&plan.fold_systems)
            .all(|(f, s)| f.iter().all(|id| id.starts_with(&format!("{s}:"))));

    let failures = random_partition_failures(4);
    verdict(
        convo && system && failures.is_empty(),
        format!(
            "convo fold sizes {sizes:?}; one-system folds {system}; {} of 200 random configurations failed",
            failures.len()
        ),
    )
}

fn identifiability() -> anyhow::Result<Verdict> {
    let t = Instant::now();
    let data = hidden_bilinear_data(1000, 8, 0.9, 0.3, 21);
    let train: Vec<usize> = (0..500).collect();
    let test: Vec<usize> = (500..1000).collect();
    let mut j0 = JudgeModel::new(8, 8, JudgeConfig::default(), eref(), 1)?;
    j0.center_on(stats::mean(&train.iter().map(|&i| data.y[i]).collect::<Vec<_>>()).unwrap_or(3.0));
    let hyper = JudgeHyper {
        lr: 0.01,
        epochs: 1500,
        ..Default::default()
    };
    let fit = train_judge(&data, &train, j0, &hyper)?;
    let preds = test
        .iter()
        .map(|&i| fit.model.score_encoded(&data.c[i], &data.r[i]))
        .collect::<Result<Vec<f64>, _>>()?;
    let ys: Vec<f64> = test.iter().map(|&i| data.y[i]).collect();
    let p = stats::pearson(&preds, &ys).context("degenerate predictions")?;
    let elapsed = t.elapsed();
    verdict(
        p >= 0.9 && elapsed < Duration::from_secs(60),
        format!("held-out Pearson {p:.3} on 500 points in {:.1}s", elapsed.as_secs_f64()),
    )
}

fn bandit() -> anyhow::Result<Verdict> {
    let mut worst_p: f64 = 1.0;
    for seed in 0..5 {
        let (p, _) = bandit_convergence(500, 0.5, seed);
        worst_p = worst_p.min(p);
    }
    let z = bandit_gradient_z(0.0, 10_000, 1);
    verdict(
        worst_p >= 0.95 && z < 3.0,
        format!("min P(optimal) after 500 updates over 5 seeds {worst_p:.3}; gradient bias {z:.2} SE"),
    )
}

/// Desk run shared by criteria 6-8.
struct Desk {
    runtime: Duration,
    clean: CorrelationReport,
    augmented: CorrelationReport,
    rerank: RerankReport,
    rl: RlSummary,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn run_desk(work: &Path) -> anyhow::Result<Desk> {
    let mut cfg = PipelineConfig::load(desk_config())?;
    cfg.work_dir = work.to_path_buf();
    let t = Instant::now();
    run_all(&cfg)?;
    let runtime = t.elapsed();
    let clean: CorrelationReport = read_json(&work.join(CV_REPORT))?;
    let rerank: RerankReport = read_json(&work.join(RERANK_REPORT))?;
    let rl: Option<RlSummary> = read_json(&work.join(RL_SUMMARY))?;

    cfg.judge.negatives = vec![
        NegativeKind::Empty,
        NegativeKind::RepeatPrev,
        NegativeKind::RandomUtt,
        NegativeKind::Universal,
    ];
    run_stage(Stage::JudgeTrain, &cfg)?;
    run_stage(Stage::JudgeEval, &cfg)?;
    let augmented: CorrelationReport = read_json(&work.join(CV_REPORT))?;
    Ok(Desk {
        runtime,
        clean,
        augmented,
        rerank,
        rl: rl.context("RL produced no trace")?,
    })
}

fn pipeline(desk: &Desk) -> anyhow::Result<Verdict> {
    let p = desk.clean.mean_pearson.context("no fold had enough points for a correlation")?;
    verdict(
        p >= 0.5 && desk.runtime < Duration::from_secs(30 * 60),
        format!(
            "mean held-out Pearson {p:.3} ({}, {} folds); pipeline runtime {:.1} min",
            desk.clean.mode,
            desk.clean.folds.len(),
            desk.runtime.as_secs_f64() / 60.0
        ),
    )
}

fn rerank(desk: &Desk) -> anyhow::Result<Verdict> {
    let r = &desk.rerank;
    let margin = r.margin.context("no single system was evaluated")?;
    let best = r.best_single.context("no single system was evaluated")?;
    let best_mean = r
        .evaluation
        .systems
        .iter()
        .find(|s| s.system == best)
        .map(|s| s.mean_true)
        .context("best system missing from the evaluation")?;
    ensure!(r.evaluation.contexts == 100, "evaluated {} contexts, not 100", r.evaluation.contexts);
    verdict(
        margin >= -0.05,
        format!(
            "re-ranked {:.3} vs best single {best} {best_mean:.3} over {} contexts (margin {margin:+.3})",
            r.evaluation.reranked.mean_true, r.evaluation.contexts
        ),
    )
}

fn reward_hacking(desk: &Desk) -> anyhow::Result<Verdict> {
    let rl = &desk.rl;
    let clean = desk.clean.mean_pearson.context("no clean correlation")?;
    let aug = desk.augmented.mean_pearson.context("no augmented correlation")?;
    let pass = rl.halted.is_none()
        && rl.episodes == 80
        && rl.return_gain >= 0.25
        && rl.end_degeneracy > rl.start_degeneracy
        && aug <= clean;
    verdict(
        pass,
        format!(
            "rolling return {:.3} -> {:.3} (episodes {} -> {}, {:+.1}%); degeneracy {:.2} -> {:.2}; \
             Pearson clean {clean:.3}, augmented {aug:.3}",
            rl.start_return,
            rl.end_return,
            rl.start_episode,
            rl.end_episode,
            rl.return_gain * 100.0,
            rl.start_degeneracy,
            rl.end_degeneracy
        ),
    )
}

fn report(n: usize, name: &str, outcome: std::thread::Result<anyhow::Result<Verdict>>) -> bool {
    let (pass, detail) = match outcome {
        Ok(Ok(v)) => (v.pass, v.detail),
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!("criterion {n} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut ok = true;

    let quick: [(usize, &str, fn() -> anyhow::Result<Verdict>); 5] = [
        (1, "gradient suite", gradients),
        (2, "bilinear oracle", bilinear),
        (3, "MACE suite", mace),
        (4, "fold protocol", folds),
        (5, "synthetic-judge identifiability", identifiability),
    ];
    for (n, name, f) in quick {
        if wanted(n) {
            ok &= report(n, name, catch_unwind(f));
        }
    }

    if [6, 7, 8].into_iter().any(wanted) {
        let dir = tempfile::tempdir().expect("temporary directory");
        let desk = catch_unwind(AssertUnwindSafe(|| run_desk(dir.path())));
        let desk = match desk {
            Ok(Ok(d)) => Ok(d),
            Ok(Err(e)) => Err(format!("desk pipeline failed: {e:#}")),
            Err(_) => Err("desk pipeline panicked".to_string()),
        };
        let checks: [(usize, &str, fn(&Desk) -> anyhow::Result<Verdict>); 3] = [
            (6, "end-to-end desk pipeline", pipeline),
            (7, "re-ranking dominance", rerank),
            (8, "reward hacking", reward_hacking),
        ];
        for (n, name, f) in checks {
            if wanted(n) {
                let outcome = match &desk {
                    Ok(d) => catch_unwind(AssertUnwindSafe(|| f(d))),
                    Err(e) => Ok(Err(anyhow::anyhow!("{e}"))),
                };
                ok &= report(n, name, outcome);
            }
        }
    }

    if wanted(9) {
        ok &= report(9, "bandit oracle", catch_unwind(bandit));
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
