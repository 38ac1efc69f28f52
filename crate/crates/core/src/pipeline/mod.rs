//! Stage runner. Stages read and write files under the work directory only;
//! every run leaves a manifest with the hashes of what it read and wrote.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::annotation::service::system_clock;
use crate::annotation::store::write_atomic;
use crate::annotation::{
    agreement_report, build_dataset, load_dataset, mace_aggregate, write_dataset, AggregatedRecord, AgreementReport,
    AnnotationService, MaceOutput, RatingStore,
};
use crate::annotation::store::ratings_from_csv;
use crate::applications::rl::{read_trace, trace_svg, write_trace};
use crate::applications::{
    evaluate_rerank, rerank_dialogue, run_rl, DialoguePolicy, MovingBaseline, PolicyState, RerankEvaluation,
    RerankSystem, RlConfig, TraceRow,
};
use crate::corpus::{load_dialogues, minicorpus, write_dialogues, Dialogue, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::judge::{
    augment_negatives, evaluate_cv, make_folds, train_judge, CorrelationReport, JudgeEncoder, JudgeModel,
};
use crate::models::snapshot::{load_snapshot, save_snapshot, write_training_log};
use crate::models::{train_model, Architecture, ModelParams};
use crate::selftalk::{run_selftalk, sample_contexts, CandidatePool, SelfTalkJob, SelfTalkManifest};
use crate::synthetic::{rate_response, simulate_annotation, SimJudge};

pub use config::PipelineConfig;
pub use manifest::Manifest;

/// Scalar used by every stage.
pub type F = f32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Train,
    SelfTalk,
    Serve,
    Aggregate,
    JudgeTrain,
    JudgeEval,
    Rerank,
    Rl,
    Plot,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Train,
        Stage::SelfTalk,
        Stage::Serve,
        Stage::Aggregate,
        Stage::JudgeTrain,
        Stage::JudgeEval,
        Stage::Rerank,
        Stage::Rl,
        Stage::Plot,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::SelfTalk => "selftalk",
            Stage::Serve => "serve",
            Stage::Aggregate => "aggregate",
            Stage::JudgeTrain => "judge-train",
            Stage::JudgeEval => "judge-eval",
            Stage::Rerank => "rerank",
            Stage::Rl => "rl",
            Stage::Plot => "plot",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage '{s}'")))
    }
}

pub const VOCAB: &str = "vocab.json";
pub const CONTEXTS: &str = "selftalk/contexts.jsonl";
pub const SELFTALK: &str = "selftalk/dialogues.jsonl";
pub const SELFTALK_RUNS: &str = "selftalk/runs.json";
pub const RATINGS: &str = "annotation/ratings.csv";
pub const STORE: &str = "annotation/store.json";
pub const LABELS: &str = "aggregate/labels.json";
pub const DATASET: &str = "aggregate/dataset.jsonl";
pub const AGREEMENT: &str = "aggregate/agreement.json";
pub const JUDGE: &str = "judge/judge.json";
pub const JUDGE_LOG: &str = "judge/train_log.jsonl";
pub const CV_REPORT: &str = "judge/cv_report.json";
pub const CV_TABLE: &str = "judge/cv_report.txt";
pub const RERANK_REPORT: &str = "rerank/report.json";
pub const RERANK_DIALOGUES: &str = "rerank/dialogues.jsonl";
pub const RL_POLICY: &str = "rl/policy.ajm";
pub const RL_TRACE: &str = "rl/trace.jsonl";
pub const RL_DIALOGUES: &str = "rl/dialogues.jsonl";
pub const RL_SUMMARY: &str = "rl/summary.json";
pub const RL_PLOT: &str = "rl/trace.svg";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";

pub fn model_path(arch: Architecture) -> String {
    format!("models/{arch}.ajm")
}

fn model_log_path(arch: Architecture) -> String {
    format!("models/{arch}.log.jsonl")
}

/// Bookkeeping for one stage run.
struct Run<'a> {
    stage: Stage,
    work: &'a Path,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    logs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(stage: Stage, cfg: &PipelineConfig, work: &'a Path) -> Self {
        Run {
            stage,
            work,
            config_hash: cfg.hash(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            logs: Vec::new(),
        }
    }

    /// Checks that `rel` exists and still matches what `producer` recorded.
    fn require(&mut self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let path = self.work.join(rel);
        let missing = |p: PathBuf| Error::MissingArtifact {
            stage: producer.to_string(),
            path: p,
        };
        if !path.exists() {
            return Err(missing(path));
        }
        let upstream = Manifest::load(self.work, producer.name())?
            .ok_or_else(|| missing(Manifest::path(self.work, producer.name())))?;
        let hash = manifest::file_hash(&path)?;
        if upstream.outputs.get(rel) != Some(&hash) {
            return Err(Error::StaleArtifact {
                stage: producer.to_string(),
                path,
            });
        }
        self.inputs.insert(rel.to_string(), hash);
        Ok(path)
    }

    /// Like `require`, but absence is not an error.
    fn optional(&mut self, rel: &str, producer: Stage) -> Result<Option<PathBuf>> {
        if self.work.join(rel).exists() {
            self.require(rel, producer).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Records a file from outside the work directory by content.
    fn external(&mut self, key: &str, path: &Path) -> Result<()> {
        self.inputs.insert(key.to_string(), manifest::file_hash(path)?);
        Ok(())
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let p = self.work.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(p)
    }

    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        self.outputs.push(rel.to_string());
        self.prepare(rel)
    }

    fn log(&mut self, rel: &str) -> Result<PathBuf> {
        self.logs.push(rel.to_string());
        self.prepare(rel)
    }

    fn write_json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<()> {
        let p = self.output(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        write_atomic(&p, text.as_bytes())
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.output(rel)?;
        write_atomic(&p, text.as_bytes())
    }

    fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            stage: self.stage.to_string(),
            config_hash: self.config_hash,
            inputs: self.inputs,
            outputs: manifest::hash_all(self.work, &self.outputs)?,
            logs: self.logs,
        };
        m.save(self.work)?;
        Ok(m)
    }
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let tag = stage
        .name()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3));
    seed ^ tag
}

/// The configured corpus split into training dialogues and the held-back
/// remainder that supplies evaluation contexts.
fn load_corpus(cfg: &PipelineConfig, run: &mut Run<'_>) -> Result<(Vec<Dialogue>, Vec<Dialogue>)> {
    let all = match &cfg.corpus.path {
        Some(p) => {
            run.external("corpus", p)?;
            load_dialogues(p)?
        }
        None => minicorpus::bundled()?,
    };
    let n = cfg.corpus.train_dialogues;
    if all.len() <= n {
        return Err(Error::NoData(format!(
            "corpus has {} dialogues; {} are reserved for training and none remain for contexts",
            all.len(),
            n
        )));
    }
    let rest = all[n..].to_vec();
    let mut train = all;
    train.truncate(n);
    Ok((train, rest))
}

fn load_vocab(run: &mut Run<'_>) -> Result<Vocab> {
    let p = run.require(VOCAB, Stage::Train)?;
    read_json(&p)
}

fn load_model(run: &mut Run<'_>, arch: Architecture, vocab: &Vocab) -> Result<ModelParams<F>> {
    let p = run.require(&model_path(arch), Stage::Train)?;
    load_snapshot(&p, vocab)
}

fn load_encoder(cfg: &PipelineConfig, run: &mut Run<'_>, vocab: &Vocab) -> Result<JudgeEncoder<F>> {
    let arch = cfg.judge.encoder;
    let params = load_model(run, arch, vocab)?;
    JudgeEncoder::new(params, vocab.clone(), model_path(arch))
}

fn training_pool(train: &[Dialogue], vocab: &Vocab, max_len: usize, size: usize) -> CandidatePool {
    CandidatePool {
        training: train
            .iter()
            .flat_map(|d| d.turns())
            .map(|u| vocab.encode(u, max_len))
            .collect(),
        per_seed: BTreeMap::new(),
        size,
    }
}

/// Runs one stage against the configuration's work directory.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let work = cfg.work_dir.as_path();
    std::fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;
    let run = Run::new(stage, cfg, work);
    tracing::info!(%stage, work = %work.display(), "stage started");
    let m = match stage {
        Stage::Train => train(cfg, run),
        Stage::SelfTalk => selftalk(cfg, run),
        Stage::Serve => serve(cfg, run),
        Stage::Aggregate => aggregate(cfg, run),
        Stage::JudgeTrain => judge_train(cfg, run),
        Stage::JudgeEval => judge_eval(cfg, run),
        Stage::Rerank => rerank(cfg, run),
        Stage::Rl => rl(cfg, run),
        Stage::Plot => plot(run),
        Stage::Report => report(run),
    }?;
    tracing::info!(%stage, outputs = m.outputs.len(), "stage finished");
    Ok(m)
}

/// Every stage in order. Needs simulated annotation, since serving waits
/// for people.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<Manifest>> {
    if !cfg.annotation.simulate {
        return Err(Error::InvalidArgument(
            "running every stage needs annotation.simulate = true".into(),
        ));
    }
    Stage::ALL.into_iter().map(|s| run_stage(s, cfg)).collect()
}

fn train(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let (train_set, _) = load_corpus(cfg, &mut run)?;
    let vocab = Vocab::build(&train_set, cfg.corpus.vocab_size)?;
    let unk = vocab.unk_stats(&train_set);
    tracing::info!(size = vocab.len(), unk_rate = unk.unk_rate, "vocabulary built");
    run.write_json(VOCAB, &vocab)?;

    let enc = cfg.models.encoder_config();
    let embedding = match &cfg.corpus.embeddings {
        Some(p) => {
            run.external("embeddings", p)?;
            Some(EmbeddingTable::<F>::load(p, &vocab, cfg.seed)?)
        }
        None => None,
    };
    let systems: BTreeSet<Architecture> = cfg.models.systems.iter().copied().collect();
    let results: Vec<(Architecture, Result<_>)> = std::thread::scope(|s| {
        let handles: Vec<_> = systems
            .iter()
            .map(|&arch| {
                let hyper = cfg.models.hyper_for(arch, stage_seed(cfg.seed, Stage::Train));
                let (data, vocab, embedding) = (&train_set, &vocab, embedding.as_ref());
                (arch, s.spawn(move || train_model(data, arch, enc, &hyper, vocab, embedding)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(arch, h)| (arch, h.join().expect("training thread panicked")))
            .collect()
    });
    for (arch, outcome) in results {
        let outcome = outcome.map_err(|e| Error::Snapshot(format!("training {arch}: {e}")))?;
        if let Some(last) = outcome.log.last() {
            tracing::info!(%arch, loss = last.loss, secs = last.wallclock, "trained");
        }
        let p = run.output(&model_path(arch))?;
        save_snapshot(&p, &outcome.params)?;
        let lp = run.log(&model_log_path(arch))?;
        write_training_log(&lp, &outcome.log)?;
    }
    run.finish()
}

fn selftalk(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let vocab = load_vocab(&mut run)?;
    let (train_set, rest) = load_corpus(cfg, &mut run)?;
    let st = &cfg.selftalk;
    let contexts = sample_contexts(&rest, st.contexts, stage_seed(cfg.seed, Stage::SelfTalk), st.seed_turns)?;

    // The dual encoder selects among what the others said, so it goes last.
    let mut order: Vec<Architecture> = cfg.models.systems.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    order.sort_by_key(|a| (*a == Architecture::De, *a));

    let mut dialogues = Vec::new();
    let mut runs: Vec<SelfTalkManifest> = Vec::new();
    let mut pool: Option<CandidatePool> = None;
    for arch in order {
        let params = load_model(&mut run, arch, &vocab)?;
        if arch == Architecture::De {
            let max_len = params.config.max_utterance_len;
            let mut p = training_pool(&train_set, &vocab, max_len, st.de_pool);
            for d in &dialogues {
                let d: &Dialogue = d;
                let seed_id = d.dialogue_id.split_once(':').map_or(d.dialogue_id.as_str(), |(_, s)| s);
                p.per_seed
                    .entry(seed_id.to_string())
                    .or_default()
                    .extend(d.generated.iter().map(|u| vocab.encode(u, max_len)));
            }
            pool = Some(p);
        }
        let job = SelfTalkJob {
            system: arch.system(),
            contexts: contexts.clone(),
            turns_per_dialogue: st.turns,
            rng_seed: stage_seed(cfg.seed, Stage::SelfTalk).wrapping_add(arch as u64),
            mode: st.mode,
        };
        let out = run_selftalk(&job, &params, &vocab, pool.as_ref())?;
        dialogues.extend(out.dialogues);
        runs.push(out.manifest);
    }
    let failures: usize = runs.iter().map(|r| r.failures.len()).sum();
    if dialogues.is_empty() {
        return Err(Error::NoData(format!("self-talk produced no dialogues ({failures} failures)")));
    }
    dialogues.sort_by(|a, b| (a.origin_system, &a.dialogue_id).cmp(&(b.origin_system, &b.dialogue_id)));

    let p = run.output(CONTEXTS)?;
    write_dialogues(&p, &contexts)?;
    let p = run.output(SELFTALK)?;
    write_dialogues(&p, &dialogues)?;
    run.write_json(SELFTALK_RUNS, &runs)?;
    run.finish()
}

fn serve(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let p = run.require(SELFTALK, Stage::SelfTalk)?;
    let dialogues = load_dialogues(&p)?;
    let store_path = run.log(STORE)?;
    let ann = &cfg.annotation;
    let svc = if ann.simulate {
        // Fresh store and a counting clock keep simulated runs reproducible.
        for stale in [store_path.clone(), RatingStore::open(&store_path)?.audit_path().expect("file store")] {
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
            }
        }
        let tick = Arc::new(AtomicU64::new(0));
        let clock = Arc::new(move || tick.fetch_add(1, Ordering::Relaxed));
        let svc = AnnotationService::new(dialogues, RatingStore::open(&store_path)?, ann.service.clone(), clock);
        let judges: Vec<SimJudge> = ann
            .simulated_noise
            .iter()
            .take(ann.service.judges_per_turn)
            .enumerate()
            .map(|(k, &sd)| SimJudge {
                id: format!("sim-{}", k + 1),
                noise_sd: sd,
                seed: stage_seed(cfg.seed, Stage::Serve).wrapping_add(k as u64),
            })
            .collect();
        let batches = simulate_annotation(&svc, &judges).map_err(|e| Error::Annotation(e.to_string()))?;
        tracing::info!(batches, ratings = svc.ratings().len(), "simulated annotation finished");
        svc
    } else {
        let svc = Arc::new(AnnotationService::new(
            dialogues,
            RatingStore::open(&store_path)?,
            ann.service.clone(),
            system_clock(),
        ));
        let addr: std::net::SocketAddr = format!("{}:{}", ann.host, ann.port)
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("annotation address: {e}")))?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io(&store_path, e))?;
        rt.block_on(crate::annotation::http::serve(svc.clone(), addr))
            .map_err(|e| Error::io(&store_path, e))?;
        Arc::try_unwrap(svc).map_err(|_| Error::Annotation("service still in use at shutdown".into()))?
    };
    let csv = svc.export_csv().map_err(|e| Error::Annotation(e.to_string()))?;
    run.write_text(RATINGS, &csv)?;
    run.finish()
}

fn aggregate(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let rp = run.require(RATINGS, Stage::Serve)?;
    let dp = run.require(SELFTALK, Stage::SelfTalk)?;
    let text = std::fs::read_to_string(&rp).map_err(|e| Error::io(&rp, e))?;
    let ratings = ratings_from_csv(&text)?;
    let dialogues = load_dialogues(&dp)?;
    let mace: MaceOutput = mace_aggregate(&ratings, &cfg.aggregate)?;
    let agreement = agreement_report(&ratings, &mace.labels, &mace.profiles);
    let records = build_dataset(&dialogues, &mace.labels)?;
    run.write_json(LABELS, &mace)?;
    run.write_json(AGREEMENT, &agreement)?;
    let p = run.output(DATASET)?;
    write_dataset(&p, &records)?;
    run.finish()
}

/// Rated records plus any configured synthetic negatives.
fn judge_records(cfg: &PipelineConfig, run: &mut Run<'_>) -> Result<Vec<AggregatedRecord>> {
    let p = run.require(DATASET, Stage::Aggregate)?;
    let records = load_dataset(&p)?;
    if cfg.judge.negatives.is_empty() {
        return Ok(records);
    }
    augment_negatives(
        &records,
        &cfg.judge.negatives,
        cfg.judge.per_context,
        stage_seed(cfg.seed, Stage::JudgeTrain),
    )
}

fn judge_train(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let records = judge_records(cfg, &mut run)?;
    let vocab = load_vocab(&mut run)?;
    let mut encoder = load_encoder(cfg, &mut run, &vocab)?;
    let data = encoder.encode_records(&records)?;
    let seed = stage_seed(cfg.seed, Stage::JudgeTrain);
    let mut j0 = JudgeModel::new(
        encoder.context_dim(),
        encoder.response_dim(),
        cfg.judge.model,
        encoder.reference(),
        seed,
    )?;
    let mean = records.iter().map(|r| r.label as f64).sum::<f64>() / records.len().max(1) as f64;
    j0.center_on(mean);
    let idx: Vec<usize> = (0..data.len()).collect();
    let hyper = crate::judge::JudgeHyper {
        seed,
        ..cfg.judge.hyper
    };
    let out = train_judge(&data, &idx, j0, &hyper)?;
    tracing::info!(initial = out.initial_mse, best = out.model.mse(&data, &idx), "judge trained");
    let p = run.output(JUDGE)?;
    out.model.save(&p)?;
    let lines: String = out
        .log
        .iter()
        .map(|e| serde_json::to_string(e).map(|s| s + "\n"))
        .collect::<std::result::Result<_, _>>()?;
    run.write_text(JUDGE_LOG, &lines)?;
    run.finish()
}

fn judge_eval(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let jp = run.require(JUDGE, Stage::JudgeTrain)?;
    let judge = JudgeModel::<F>::load(&jp)?;
    let records = judge_records(cfg, &mut run)?;
    let dp = run.require(SELFTALK, Stage::SelfTalk)?;
    let dialogues = load_dialogues(&dp)?;
    let vocab = load_vocab(&mut run)?;
    let mut encoder = load_encoder(cfg, &mut run, &vocab)?;
    if judge.encoder.hash != encoder.hash() {
        return Err(Error::HashMismatch {
            expected: judge.encoder.hash.clone(),
            found: encoder.hash(),
        });
    }
    let data = encoder.encode_records(&records)?;
    let seed = stage_seed(cfg.seed, Stage::JudgeEval);
    let plan = make_folds(&dialogues, cfg.judge.split, cfg.judge.k, seed)?;
    let hyper = crate::judge::JudgeHyper {
        seed,
        ..cfg.judge.hyper
    };
    let report = evaluate_cv(&records, &data, &plan, cfg.judge.model, &hyper, &encoder.reference())?;
    tracing::info!(mode = %report.mode, pearson = ?report.mean_pearson, "cross-validation finished");
    run.write_json(CV_REPORT, &report)?;
    run.write_text(CV_TABLE, &report.to_table())?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub evaluation: RerankEvaluation,
    pub best_single: Option<crate::corpus::System>,
    /// Re-ranked mean true rating minus the best single system's.
    pub margin: Option<f64>,
}

fn rerank(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let jp = run.require(JUDGE, Stage::JudgeTrain)?;
    let judge = JudgeModel::<F>::load(&jp)?;
    let vocab = load_vocab(&mut run)?;
    let mut encoder = load_encoder(cfg, &mut run, &vocab)?;
    let (train_set, rest) = load_corpus(cfg, &mut run)?;
    let systems: BTreeSet<Architecture> = cfg.models.systems.iter().copied().collect();
    let params: Vec<ModelParams<F>> = systems
        .iter()
        .map(|&a| load_model(&mut run, a, &vocab))
        .collect::<Result<_>>()?;
    let pool = training_pool(
        &train_set,
        &vocab,
        cfg.models.encoder_config().max_utterance_len,
        cfg.selftalk.de_pool,
    );
    let rs: Vec<RerankSystem<'_, F>> = params
        .iter()
        .map(|p| RerankSystem {
            params: p,
            pool: (p.architecture == Architecture::De).then_some(&pool),
        })
        .collect();
    let seed = stage_seed(cfg.seed, Stage::Rerank);
    let n = cfg.rerank.contexts.min(rest.len());
    let contexts = sample_contexts(&rest, n, seed, cfg.selftalk.seed_turns)?;
    let evaluation = evaluate_rerank(&contexts, &rs, &judge, &mut encoder, cfg.rerank.mode, seed, rate_response)?;
    let best = evaluation.best_single().cloned();
    let report = RerankReport {
        best_single: best.as_ref().map(|b| b.system),
        margin: best.map(|b| evaluation.reranked.mean_true - b.mean_true),
        evaluation,
    };
    tracing::info!(margin = ?report.margin, "re-ranking evaluated");
    let mut dialogues = Vec::new();
    for (k, c) in contexts.iter().take(cfg.rerank.dialogues).enumerate() {
        let rng_seed = crate::selftalk::dialogue_seed(seed ^ 1, k);
        dialogues.push(rerank_dialogue(c, &rs, &judge, &mut encoder, cfg.selftalk.turns, cfg.rerank.mode, rng_seed)?);
    }
    run.write_json(RERANK_REPORT, &report)?;
    let p = run.output(RERANK_DIALOGUES)?;
    write_dialogues(&p, &dialogues)?;
    run.finish()
}

/// Rolling return and degeneracy at two checkpoints of an RL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSummary {
    pub episodes: usize,
    pub start_episode: usize,
    pub end_episode: usize,
    pub start_return: f64,
    pub end_return: f64,
    pub return_gain: f64,
    pub start_degeneracy: f64,
    pub end_degeneracy: f64,
    pub halted: Option<String>,
}

fn row_degeneracy(r: &TraceRow) -> f64 {
    r.frac_empty + r.frac_repeat + r.modal_share
}

/// Start is the first episode with a full rolling window, end the last.
pub fn summarize_trace(trace: &[TraceRow], window: usize, halted: Option<String>) -> Option<RlSummary> {
    let last = trace.last()?;
    let first = &trace[window.clamp(1, trace.len()) - 1];
    Some(RlSummary {
        episodes: trace.len(),
        start_episode: first.episode,
        end_episode: last.episode,
        start_return: first.rolling_return,
        end_return: last.rolling_return,
        return_gain: (last.rolling_return - first.rolling_return) / first.rolling_return.abs(),
        start_degeneracy: row_degeneracy(first),
        end_degeneracy: row_degeneracy(last),
        halted,
    })
}

fn rl(cfg: &PipelineConfig, mut run: Run<'_>) -> Result<Manifest> {
    let jp = run.require(JUDGE, Stage::JudgeTrain)?;
    let judge = JudgeModel::<F>::load(&jp)?;
    let vocab = load_vocab(&mut run)?;
    let mut encoder = load_encoder(cfg, &mut run, &vocab)?;
    let params = load_model(&mut run, cfg.rl.policy, &vocab)?;
    let (_, rest) = load_corpus(cfg, &mut run)?;
    let seed = stage_seed(cfg.seed, Stage::Rl);
    let seeds = sample_contexts(&rest, rest.len(), seed, cfg.selftalk.seed_turns)?;
    let r = &cfg.rl;
    let mut state = PolicyState::new(
        DialoguePolicy::new(params)?,
        r.optimizer,
        r.episode_batch_size,
        r.baseline.then(|| MovingBaseline::new(r.baseline_window)),
    )?;
    let rc = RlConfig {
        episodes: r.episodes,
        rollout_len: r.rollout_len,
        rolling_window: r.rolling_window,
        seed,
    };
    let out = run_rl(&mut state, &judge, &mut encoder, &seeds, &rc)?;
    let p = run.output(RL_TRACE)?;
    write_trace(&p, &out.trace)?;
    if let Some(why) = &out.halted {
        run.finish()?;
        return Err(Error::NonFinite {
            epoch: out.trace.len(),
            step: 0,
            detail: format!("RL halted, trace kept in {RL_TRACE}: {why}"),
        });
    }
    let summary = summarize_trace(&out.trace, r.rolling_window, None);
    tracing::info!(?summary, "RL finished");
    let p = run.output(RL_POLICY)?;
    save_snapshot(&p, &state.policy.params)?;
    let p = run.output(RL_DIALOGUES)?;
    write_dialogues(&p, &out.dialogues)?;
    run.write_json(RL_SUMMARY, &summary)?;
    run.finish()
}

fn plot(mut run: Run<'_>) -> Result<Manifest> {
    let p = run.require(RL_TRACE, Stage::Rl)?;
    let trace = read_trace(&p)?;
    run.write_text(RL_PLOT, &trace_svg(&trace))?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub agreement: AgreementReport,
    pub correlation: CorrelationReport,
    pub rerank: Option<RerankReport>,
    pub rl: Option<RlSummary>,
}

fn report(mut run: Run<'_>) -> Result<Manifest> {
    let agreement: AgreementReport = read_json(&run.require(AGREEMENT, Stage::Aggregate)?)?;
    let correlation: CorrelationReport = read_json(&run.require(CV_REPORT, Stage::JudgeEval)?)?;
    let rerank: Option<RerankReport> = run
        .optional(RERANK_REPORT, Stage::Rerank)?
        .map(|p| read_json(&p))
        .transpose()?;
    let rl: Option<RlSummary> = run.optional(RL_SUMMARY, Stage::Rl)?.map(|p| read_json(&p)).transpose()?;
    let rep = PipelineReport {
        agreement,
        correlation,
        rerank,
        rl,
    };
    run.write_text(REPORT_MD, &render_report(&rep))?;
    run.write_json(REPORT_JSON, &rep)?;
    run.finish()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn render_report(r: &PipelineReport) -> String {
    use std::fmt::Write;
    let mut s = String::from("# AutoJudge report\n\n## Annotation agreement\n\n");
    let a = &r.agreement;
    let _ = writeln!(s, "- median pairwise Spearman: {} over {} judge pairs", opt(a.median_pairwise_spearman), a.pairs_compared);
    let _ = writeln!(s, "- mean judge competence: {:.3}", a.mean_judge_confidence);
    let _ = writeln!(s, "- mean label posterior: {:.3}", a.mean_label_confidence);
    let hist: Vec<String> = a.label_histogram.iter().enumerate().map(|(i, h)| format!("{}: {:.1}%", i + 1, 100.0 * h)).collect();
    let _ = writeln!(s, "- label distribution: {}", hist.join(", "));
    let _ = writeln!(s, "\n## Judge cross-validation\n\n```\n{}```", r.correlation.to_table());
    if let Some(rr) = &r.rerank {
        let _ = writeln!(s, "\n## Re-ranking\n\n| system | contexts | mean true rating | mean judge score |\n|---|---|---|---|");
        for x in rr.evaluation.systems.iter().chain([&rr.evaluation.reranked]) {
            let _ = writeln!(s, "| {} | {} | {:.3} | {:.3} |", x.system, x.contexts, x.mean_true, x.mean_judge);
        }
        let _ = writeln!(s, "\nmargin over best single system: {}", opt(rr.margin));
    }
    if let Some(rl) = &r.rl {
        let _ = writeln!(s, "\n## Policy gradient against the judge\n");
        let _ = writeln!(s, "| checkpoint | episode | rolling return | degeneracy |\n|---|---|---|---|");
        let _ = writeln!(s, "| start | {} | {:.3} | {:.3} |", rl.start_episode, rl.start_return, rl.start_degeneracy);
        let _ = writeln!(s, "| end | {} | {:.3} | {:.3} |", rl.end_episode, rl.end_return, rl.end_degeneracy);
        let _ = writeln!(s, "\nreturn gain: {:+.1}%", 100.0 * rl.return_gain);
    }
    s
}
