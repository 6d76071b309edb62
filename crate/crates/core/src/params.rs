//! Named parameter tensors with group addressing.
//!
//! Group names follow the tensor name prefix: `embedding.token` belongs to
//! `embedding`, `layer.0.attn.wq` to `layer.0`, `head.w` to `head`.

use std::collections::BTreeMap;

use cifm_autograd::{Gradients, Graph, Matrix, Var};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{CifmError, Result};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

/// Group a parameter name belongs to.
pub fn group_of(name: &str) -> &str {
    let mut parts = name.splitn(3, '.');
    let first = parts.next().unwrap_or(name);
    if first == "layer" {
        if let Some(idx) = parts.next() {
            return &name[..first.len() + 1 + idx.len()];
        }
    }
    first
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Matrix) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Matrix {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Bind tensor `idx` to a graph.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, idx: usize) -> Var {
        g.param(&self.tensors[idx])
    }

    /// Group name → tensor indices, in insertion order within each group.
    pub fn groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.names.iter().enumerate() {
            out.entry(group_of(n).to_string()).or_default().push(i);
        }
        out
    }

    /// Indices of every tensor in the named groups. Unknown names are a config error.
    pub fn resolve_groups(&self, groups: &[String]) -> Result<Vec<usize>> {
        let all = self.groups();
        let mut out = Vec::new();
        for g in groups {
            let members = all.get(g).ok_or_else(|| {
                CifmError::Config(format!(
                    "unknown parameter group '{g}' (available: {})",
                    all.keys().cloned().collect::<Vec<_>>().join(", ")
                ))
            })?;
            out.extend(members.iter().copied());
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Gradients for every tensor, zero where the tensor was unused.
    pub fn grads_from(&self, g: &Graph<'_>, grads: &Gradients) -> Vec<Matrix> {
        self.tensors
            .iter()
            .map(|t| grads.wrt(g, t).unwrap_or_else(|| Array2::zeros(t.dim())))
            .collect()
    }

    /// SHA-256 over names, shapes and exact bit patterns of the selected tensors.
    pub fn checksum_of(&self, indices: &[usize]) -> String {
        let mut h = Sha256::new();
        for &i in indices {
            h.update(self.names[i].as_bytes());
            let (r, c) = self.tensors[i].dim();
            h.update((r as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
            for v in self.tensors[i].iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn checksum(&self) -> String {
        self.checksum_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Checksum of every group except those listed.
    pub fn checksum_excluding(&self, excluded: &[&str]) -> String {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| !excluded.contains(&group_of(&self.names[i])))
            .collect();
        self.checksum_of(&idx)
    }
}

pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub(crate) fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}
