//! Named tensor container and its binding onto a tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Grads, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered set of named tensors. Order is insertion order and is part of the
/// snapshot format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", from = "ParamSetRepr<T>")]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct ParamSetRepr<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> From<ParamSetRepr<T>> for ParamSet<T> {
    fn from(r: ParamSetRepr<T>) -> Self {
        let mut p = ParamSet {
            names: r.names,
            tensors: r.tensors,
            index: BTreeMap::new(),
        };
        p.reindex();
        p
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        if let Some(&i) = self.index.get(name) {
            self.tensors[i] = t;
            return;
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    /// SHA-256 over names, shapes and little-endian values of the selected
    /// tensors (all when `filter` accepts everything).
    pub fn hash_where(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.iter().filter(|(n, _)| filter(n)) {
            h.update(name.as_bytes());
            h.update((t.rows as u64).to_le_bytes());
            h.update((t.cols as u64).to_le_bytes());
            buf.clear();
            for v in &t.data {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_where(|_| true)
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.rows, t.cols));
        }
        out
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }
}

/// Tape variables for every tensor of a [`ParamSet`], in the same order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    /// Adds the gradients of this binding into `acc` (same layout as the
    /// bound set).
    pub fn accumulate<T: Scalar>(&self, grads: &Grads<T>, acc: &mut ParamSet<T>) {
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(g) = grads.get(*v) {
                for (a, x) in acc.tensors_mut()[i].data.iter_mut().zip(g) {
                    *a += *x;
                }
            }
        }
    }
}
