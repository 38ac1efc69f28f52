use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::mace::MaceConfig;
use crate::annotation::service::ServiceConfig;
use crate::applications::policy::PgOptimizer;
use crate::error::{Error, Result};
use crate::judge::{JudgeConfig, JudgeHyper, NegativeKind, SplitMode};
use crate::models::generate::DecodeMode;
use crate::models::train::TrainHyper;
use crate::models::{Architecture, EncoderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Line-delimited dialogues; the bundled mini-corpus when absent.
    pub path: Option<PathBuf>,
    /// Optional `word v1 v2 ...` embedding file.
    pub embeddings: Option<PathBuf>,
    pub vocab_size: usize,
    /// The first this many dialogues train the systems; the rest supply
    /// self-talk, re-ranking and RL contexts.
    pub train_dialogues: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            path: None,
            embeddings: None,
            vocab_size: 20_000,
            train_dialogues: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub preset: Preset,
    /// Replaces the preset's encoder sizes when given.
    pub encoder: Option<EncoderConfig>,
    pub hyper: TrainHyper,
    pub systems: Vec<Architecture>,
    /// Per-system epoch counts overriding `hyper.epochs`.
    pub epochs: BTreeMap<Architecture, usize>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            preset: Preset::Desk,
            encoder: None,
            hyper: TrainHyper {
                lr: 0.005,
                batch_size: 20,
                epochs: 5,
                ..TrainHyper::default()
            },
            systems: Architecture::ALL.to_vec(),
            epochs: BTreeMap::new(),
        }
    }
}

impl ModelsConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        self.encoder.unwrap_or(match self.preset {
            Preset::Desk => EncoderConfig::desk(),
            Preset::Full => EncoderConfig::full(),
        })
    }

    pub fn hyper_for(&self, arch: Architecture, seed: u64) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs.get(&arch).copied().unwrap_or(self.hyper.epochs),
            seed: seed ^ self.hyper.seed,
            ..self.hyper
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTalkConfig {
    pub contexts: usize,
    pub turns: usize,
    pub seed_turns: usize,
    pub mode: DecodeMode,
    pub de_pool: usize,
}

impl Default for SelfTalkConfig {
    fn default() -> Self {
        SelfTalkConfig {
            contexts: 20,
            turns: crate::selftalk::DEFAULT_TURNS,
            seed_turns: 1,
            mode: DecodeMode::Greedy,
            de_pool: crate::selftalk::DE_POOL_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationConfig {
    pub host: String,
    pub port: u16,
    /// Rate with simulated judges in-process instead of serving the API.
    pub simulate: bool,
    pub simulated_noise: Vec<f64>,
    pub service: ServiceConfig,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            simulate: true,
            simulated_noise: vec![0.5, 0.7, 0.9],
            service: ServiceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeStageConfig {
    pub model: JudgeConfig,
    pub hyper: JudgeHyper,
    pub split: SplitMode,
    pub k: usize,
    /// Label-1 negatives added to the training data; empty for none.
    pub negatives: Vec<NegativeKind>,
    pub per_context: usize,
    /// Model whose encoders the judge reads.
    pub encoder: Architecture,
}

impl Default for JudgeStageConfig {
    fn default() -> Self {
        JudgeStageConfig {
            model: JudgeConfig::default(),
            hyper: JudgeHyper {
                lr: 0.01,
                epochs: 300,
                patience: 20,
                ..JudgeHyper::default()
            },
            split: SplitMode::ConvoSplit,
            k: 10,
            negatives: Vec::new(),
            per_context: 1,
            encoder: Architecture::Vhred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerankConfig {
    /// Contexts for the single-response comparison.
    pub contexts: usize,
    /// Contexts continued into full re-ranked dialogues for export.
    pub dialogues: usize,
    pub mode: DecodeMode,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            contexts: 100,
            dialogues: 20,
            mode: DecodeMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlStageConfig {
    pub policy: Architecture,
    pub episodes: usize,
    pub rollout_len: usize,
    pub episode_batch_size: usize,
    pub optimizer: PgOptimizer,
    pub baseline: bool,
    pub baseline_window: usize,
    pub rolling_window: usize,
}

impl Default for RlStageConfig {
    fn default() -> Self {
        RlStageConfig {
            policy: Architecture::Hred,
            episodes: 80,
            rollout_len: 5,
            episode_batch_size: 1,
            optimizer: PgOptimizer::Adam { lr: 0.01 },
            baseline: false,
            baseline_window: 20,
            rolling_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Artifact directory, relative to the config file.
    pub work_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub models: ModelsConfig,
    pub selftalk: SelfTalkConfig,
    pub annotation: AnnotationConfig,
    pub aggregate: MaceConfig,
    pub judge: JudgeStageConfig,
    pub rerank: RerankConfig,
    pub rl: RlStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 20190801,
            work_dir: PathBuf::from("work"),
            corpus: CorpusConfig::default(),
            models: ModelsConfig::default(),
            selftalk: SelfTalkConfig::default(),
            annotation: AnnotationConfig::default(),
            aggregate: MaceConfig::default(),
            judge: JudgeStageConfig::default(),
            rerank: RerankConfig::default(),
            rl: RlStageConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`; a relative `work_dir` is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut cfg.work_dir), cfg.corpus.path.as_mut(), cfg.corpus.embeddings.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fails when a value has no TOML form, e.g. an integer above `i64::MAX`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("config not representable as TOML: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        self.to_toml()?;
        self.models.encoder_config().validate()?;
        if self.models.systems.is_empty() {
            return bad("models.systems is empty".into());
        }
        if self.models.hyper.batch_size == 0 || !(self.models.hyper.lr > 0.0) {
            return bad("models.hyper needs batch_size >= 1 and lr > 0".into());
        }
        if self.corpus.train_dialogues == 0 || self.corpus.vocab_size < 5 {
            return bad("corpus.train_dialogues and corpus.vocab_size are too small".into());
        }
        if self.selftalk.contexts == 0 || self.selftalk.turns == 0 || self.selftalk.seed_turns == 0 {
            return bad("selftalk.contexts, turns and seed_turns must be at least 1".into());
        }
        if self.annotation.service.judges_per_turn == 0 {
            return bad("annotation.service.judges_per_turn must be at least 1".into());
        }
        if self.annotation.simulate && self.annotation.simulated_noise.len() < self.annotation.service.judges_per_turn {
            return bad("annotation.simulated_noise needs one entry per judge".into());
        }
        if self.annotation.simulated_noise.iter().any(|s| !(*s >= 0.0)) {
            return bad("annotation.simulated_noise entries must be >= 0".into());
        }
        if self.aggregate.restarts == 0 || self.aggregate.em_iters == 0 {
            return bad("aggregate.restarts and em_iters must be at least 1".into());
        }
        if self.judge.k < 2 || self.judge.per_context == 0 || self.judge.hyper.batch_size == 0 {
            return bad("judge.k must be >= 2, per_context and hyper.batch_size >= 1".into());
        }
        if self.judge.model.beta == 0.0 {
            return bad("judge.model.beta must be non-zero".into());
        }
        if !self.judge.encoder.is_hierarchical() {
            return bad(format!("judge.encoder {} has no context encoder", self.judge.encoder));
        }
        if !matches!(self.rl.policy, Architecture::Hred | Architecture::Seq2seq) {
            return bad(format!("rl.policy {} has no exact likelihood", self.rl.policy));
        }
        if self.rl.episode_batch_size == 0 || self.rl.rollout_len == 0 {
            return bad("rl.episode_batch_size and rollout_len must be at least 1".into());
        }
        Ok(())
    }

    /// Hash of the parsed configuration, so formatting and comments do not
    /// count as changes.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}
