use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Word vectors aligned with a [`Vocab`]; the PAD row is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    pub dim: usize,
    pub vectors: Tensor<T>,
}

pub const INIT_BOUND: f64 = 0.1;

impl<T: Scalar> EmbeddingTable<T> {
    /// Uniform in `[-0.1, 0.1]`.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Tensor::uniform(vocab_size, dim, INIT_BOUND, &mut rng);
        vectors.data[PAD as usize * dim..(PAD as usize + 1) * dim].fill(T::zero());
        EmbeddingTable { dim, vectors }
    }

    /// Reads a `vocab_count dim` header followed by `surface v1 .. v_dim`
    /// lines. Vocabulary entries missing from the file keep their random
    /// initialization.
    pub fn load(path: impl AsRef<Path>, vocab: &Vocab, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), vocab, seed).map_err(|e| match e {
            Error::Validation { line, message } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn read<R: BufRead>(reader: R, vocab: &Vocab, seed: u64) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, message: String| Error::Validation { line, message };
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))?;
        let header = header.map_err(|e| bad(1, e.to_string()))?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| s.and_then(|x| x.parse::<usize>().ok());
        let (count, dim) = match (parse_usize(parts.next()), parse_usize(parts.next())) {
            (Some(c), Some(d)) if d > 0 => (c, d),
            _ => return Err(bad(1, format!("header must be 'vocab_count dim', got '{header}'"))),
        };

        let mut table = Self::random(vocab.len(), dim, seed);
        let mut seen = 0;
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| bad(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            let mut fields = line.split_whitespace();
            let surface = fields.next().unwrap_or_default();
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(line_no, format!("bad float: {e}")))?;
            if values.len() != dim {
                return Err(bad(
                    line_no,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(line_no, "non-finite embedding value".into()));
            }
            if !vocab.contains(surface) {
                continue;
            }
            let id = vocab.id(surface);
            if id == PAD {
                continue;
            }
            let row = &mut table.vectors.data[id as usize * dim..(id as usize + 1) * dim];
            for (r, v) in row.iter_mut().zip(values) {
                *r = T::of(v);
            }
        }
        if seen != count {
            tracing::warn!(declared = count, found = seen, "embedding file row count differs from header");
        }
        Ok(table)
    }
}
