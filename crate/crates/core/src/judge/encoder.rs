use std::collections::HashMap;

use crate::annotation::dataset::AggregatedRecord;
use crate::corpus::dialogue::Utterance;
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::models::graph::Graph;
use crate::models::{ops, Architecture, ModelParams};
use crate::scalar::Scalar;

use super::EncoderRef;

/// Encodings aligned with their targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedData<T> {
    pub c: Vec<Vec<T>>,
    pub r: Vec<Vec<T>>,
    pub y: Vec<T>,
}

impl<T: Scalar> EncodedData<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Frozen context and response encoders taken from a trained dialogue model.
pub struct JudgeEncoder<T> {
    pub params: ModelParams<T>,
    pub vocab: Vocab,
    pub source: String,
    turn_cache: HashMap<Vec<u32>, Vec<T>>,
}

impl<T: Scalar> JudgeEncoder<T> {
    pub fn new(params: ModelParams<T>, vocab: Vocab, source: impl Into<String>) -> Result<Self> {
        if params.vocab_hash != vocab.hash() || params.vocab_size != vocab.len() {
            return Err(Error::HashMismatch {
                expected: params.vocab_hash.clone(),
                found: vocab.hash(),
            });
        }
        if params.architecture == Architecture::Seq2seq {
            return Err(Error::Architecture(
                "judge encoders need a model with a context encoder".into(),
            ));
        }
        Ok(JudgeEncoder {
            params,
            vocab,
            source: source.into(),
            turn_cache: HashMap::new(),
        })
    }

    pub fn hash(&self) -> String {
        self.params.encoder_hash()
    }

    pub fn reference(&self) -> EncoderRef {
        EncoderRef {
            source: self.source.clone(),
            hash: self.hash(),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.params.context_dim()
    }

    pub fn response_dim(&self) -> usize {
        self.params.turn_dim()
    }

    fn ids(&self, u: &Utterance) -> Vec<u32> {
        self.vocab.encode(u, self.params.config.max_utterance_len)
    }

    fn turn(&mut self, ids: Vec<u32>) -> Result<Vec<T>> {
        if let Some(v) = self.turn_cache.get(&ids) {
            return Ok(v.clone());
        }
        let v = ops::encode_turn(&self.params, &ids)?;
        self.turn_cache.insert(ids, v.clone());
        Ok(v)
    }

    /// `(c, r)`: the context encoder over the whole history and the turn
    /// encoder over the response.
    pub fn encode(&mut self, context: &[Utterance], response: &Utterance) -> Result<(Vec<T>, Vec<T>)> {
        if context.is_empty() {
            return Err(Error::InvalidArgument("judge context has no turns".into()));
        }
        let mut encs = Vec::with_capacity(context.len());
        for u in context {
            let ids = self.ids(u);
            encs.push(self.turn(ids)?);
        }
        let mut g = Graph::new(&self.params);
        let xs: Vec<_> = encs.into_iter().map(|e| g.tape.constant(e)).collect();
        let h = g.run_lstm("context", &xs, self.params.config.context_encoder_units);
        let c = g.tape.value(h).to_vec();
        drop(g);
        let r = self.turn(self.ids(response))?;
        Ok((c, r))
    }

    pub fn encode_records(&mut self, records: &[AggregatedRecord]) -> Result<EncodedData<T>> {
        let mut out = EncodedData {
            c: Vec::with_capacity(records.len()),
            r: Vec::with_capacity(records.len()),
            y: Vec::with_capacity(records.len()),
        };
        for rec in records {
            let (c, r) = self.encode(&rec.context(), &rec.response())?;
            out.c.push(c);
            out.r.push(r);
            out.y.push(T::of(rec.label));
        }
        Ok(out)
    }
}
