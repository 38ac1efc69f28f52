//! The five dialogue systems: Seq2Seq, HRED, VHRED, MrRNN and the Dual
//! Encoder, at configurable scale.

pub mod coarse;
pub mod generate;
pub mod graph;
pub mod ops;
pub mod snapshot;
pub mod train;

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dialogue::System;
use crate::corpus::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use coarse::{extract_coarse_sequence, Stoplist, COARSE_EMPTY};
pub use generate::{generate_response, DecodeMode};
pub use ops::{
    contrastive_loss, elbo_terms, encode_context, encode_turn, kl_diag_gaussian, reconstruction_loss,
    ContrastiveBatch, ElboTerms, LatentSample,
};
pub use train::{train_model, EpochLog, TrainHyper, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Architecture {
    Seq2seq,
    Hred,
    Vhred,
    Mrrnn,
    De,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Seq2seq,
        Architecture::Hred,
        Architecture::Vhred,
        Architecture::Mrrnn,
        Architecture::De,
    ];

    pub fn system(self) -> System {
        match self {
            Architecture::Seq2seq => System::Seq2seq,
            Architecture::Hred => System::Hred,
            Architecture::Vhred => System::Vhred,
            Architecture::Mrrnn => System::Mrrnn,
            Architecture::De => System::De,
        }
    }

    pub fn from_system(s: System) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.system() == s)
    }

    pub fn is_generative(self) -> bool {
        self != Architecture::De
    }

    pub fn is_hierarchical(self) -> bool {
        self != Architecture::Seq2seq
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.system().fmt(f)
    }
}

/// Layer sizes. The desk preset keeps the proportions of the 500/1000/1000
/// full configuration at a tenth of the width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub turn_encoder_units: usize,
    pub context_encoder_units: usize,
    pub decoder_units: usize,
    pub embedding_dim: usize,
    pub bidirectional_turn_encoder: bool,
    /// VHRED latent size.
    pub latent_dim: usize,
    pub max_utterance_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            turn_encoder_units: 50,
            context_encoder_units: 100,
            decoder_units: 100,
            embedding_dim: 64,
            bidirectional_turn_encoder: true,
            latent_dim: 16,
            max_utterance_len: 30,
        }
    }

    pub fn full() -> Self {
        EncoderConfig {
            turn_encoder_units: 500,
            context_encoder_units: 1000,
            decoder_units: 1000,
            embedding_dim: 300,
            bidirectional_turn_encoder: true,
            latent_dim: 100,
            max_utterance_len: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("turn_encoder_units", self.turn_encoder_units),
            ("context_encoder_units", self.context_encoder_units),
            ("decoder_units", self.decoder_units),
            ("embedding_dim", self.embedding_dim),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.max_utterance_len < 2 {
            return Err(Error::InvalidArgument(
                "max_utterance_len must leave room for one token and EOS".into(),
            ));
        }
        Ok(())
    }

    pub fn turn_dim(&self) -> usize {
        if self.bidirectional_turn_encoder {
            2 * self.turn_encoder_units
        } else {
            self.turn_encoder_units
        }
    }
}

/// Weights of one dialogue system plus everything needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub architecture: Architecture,
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub weights: ParamSet<T>,
    /// Stoplist token ids (MrRNN only).
    pub stoplist: Vec<u32>,
    pub meta: BTreeMap<String, String>,
}

pub const LSTM_INIT_BOUND: f64 = 0.08;

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters: LSTM and projection weights uniform in
    /// `[-0.08, 0.08]`, forget-gate biases 1, other biases 0.
    pub fn init(
        architecture: Architecture,
        config: EncoderConfig,
        vocab_size: usize,
        vocab_hash: impl Into<String>,
        embedding: Option<&EmbeddingTable<T>>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let e = c.embedding_dim;
        let ht = c.turn_encoder_units;
        let hc = c.context_encoder_units;
        let hd = c.decoder_units;
        let turn_dim = c.turn_dim();
        let mut w = ParamSet::new();

        let emb = match embedding {
            Some(t) => {
                if t.dim != e || t.vectors.rows != vocab_size {
                    return Err(Error::Shape(format!(
                        "embedding table is {}x{}, model expects {}x{}",
                        t.vectors.rows, t.dim, vocab_size, e
                    )));
                }
                t.vectors.clone()
            }
            None => EmbeddingTable::random(vocab_size, e, seed ^ 0x5eed).vectors,
        };
        w.insert("embedding", emb);

        let mut lstm = |w: &mut ParamSet<T>, name: &str, input: usize, hidden: usize| {
            w.insert(
                &format!("{name}.w"),
                Tensor::uniform(4 * hidden, input + hidden, LSTM_INIT_BOUND, &mut rng),
            );
            let mut b = Tensor::zeros(4 * hidden, 1);
            b.data[hidden..2 * hidden].fill(T::one());
            w.insert(&format!("{name}.b"), b);
        };

        lstm(&mut w, "turn_fwd", e, ht);
        if c.bidirectional_turn_encoder {
            lstm(&mut w, "turn_bwd", e, ht);
        }
        if architecture.is_hierarchical() {
            lstm(&mut w, "context", turn_dim, hc);
        }
        if architecture == Architecture::Mrrnn {
            lstm(&mut w, "coarse_turn", e, ht);
            lstm(&mut w, "coarse_context", ht, hc);
            lstm(&mut w, "coarse_decoder", e, hd);
        }
        if architecture.is_generative() {
            lstm(&mut w, "decoder", e, hd);
        }

        let ctx_dim = Self::context_dim_for(architecture, c);
        let mut linear = |w: &mut ParamSet<T>, name: &str, out: usize, input: usize, bias: bool| {
            w.insert(
                &format!("{name}.w"),
                Tensor::uniform(out, input, LSTM_INIT_BOUND, &mut rng),
            );
            if bias {
                w.insert(&format!("{name}.b"), Tensor::zeros(out, 1));
            }
        };
        match architecture {
            Architecture::De => linear(&mut w, "response_proj", ctx_dim, turn_dim, false),
            _ => {
                let cond = Self::conditioning_dim_for(architecture, c);
                linear(&mut w, "dec_init", hd, cond, true);
                linear(&mut w, "output", vocab_size, hd, true);
            }
        }
        if architecture == Architecture::Vhred {
            linear(&mut w, "prior", 2 * c.latent_dim, ctx_dim, true);
            linear(&mut w, "posterior", 2 * c.latent_dim, ctx_dim + turn_dim, true);
        }
        if architecture == Architecture::Mrrnn {
            linear(&mut w, "coarse_dec_init", hd, hc, true);
            linear(&mut w, "coarse_output", vocab_size, hd, true);
        }

        let mut meta = BTreeMap::new();
        if architecture == Architecture::Mrrnn {
            meta.insert(
                "coarse_conditioning".into(),
                "fine decoder initial state from [context; coarse context; coarse response encoding]".into(),
            );
        }
        Ok(ModelParams {
            architecture,
            config,
            vocab_size,
            vocab_hash: vocab_hash.into(),
            weights: w,
            stoplist: Vec::new(),
            meta,
        })
    }

    pub fn context_dim_for(arch: Architecture, c: &EncoderConfig) -> usize {
        if arch.is_hierarchical() {
            c.context_encoder_units
        } else {
            c.turn_dim()
        }
    }

    /// Width of the vector the decoder's initial state is computed from.
    pub fn conditioning_dim_for(arch: Architecture, c: &EncoderConfig) -> usize {
        let ctx = Self::context_dim_for(arch, c);
        match arch {
            Architecture::Vhred => ctx + c.latent_dim,
            Architecture::Mrrnn => ctx + c.context_encoder_units + c.turn_encoder_units,
            _ => ctx,
        }
    }

    pub fn context_dim(&self) -> usize {
        Self::context_dim_for(self.architecture, &self.config)
    }

    pub fn conditioning_dim(&self) -> usize {
        Self::conditioning_dim_for(self.architecture, &self.config)
    }

    pub fn turn_dim(&self) -> usize {
        self.config.turn_dim()
    }

    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.weights
            .get(name)
            .unwrap_or_else(|| panic!("{} model has no tensor '{name}'", self.architecture))
    }

    pub fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= self.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Hash of the weights that produce context and response encodings.
    pub fn encoder_hash(&self) -> String {
        self.weights.hash_where(|n| {
            n == "embedding" || n.starts_with("turn_") || n.starts_with("context.")
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            architecture: self.architecture,
            config: self.config,
            vocab_size: self.vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            weights: self.weights.cast(),
            stoplist: self.stoplist.clone(),
            meta: self.meta.clone(),
        }
    }
}
