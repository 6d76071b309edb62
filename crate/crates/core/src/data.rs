//! Datasets, hashed tokenization and minibatch encoding.

use cifm_autograd::Matrix;
use ndarray::Array2;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{CifmError, Result};
use crate::metrics::MetricSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Class(usize),
    Scores(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub target: Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A task with interned labels and train/val/test splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: TaskKind,
    /// Class names in index order (classification only).
    pub labels: Vec<String>,
    /// Names of the regression target dimensions.
    pub target_names: Vec<String>,
    pub metrics: Vec<MetricSpec>,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Width of the model head: class count or target dimension.
    pub fn num_outputs(&self) -> usize {
        match self.task {
            TaskKind::Classification => self.labels.len(),
            TaskKind::Regression => self.target_names.len(),
        }
    }

    pub fn class_of(&self, ex: &Example) -> Option<usize> {
        match ex.target {
            Target::Class(c) => Some(c),
            Target::Scores(_) => None,
        }
    }

    /// Checks label ranges, target widths and non-empty splits.
    pub fn validate(&self) -> Result<()> {
        for (split, rows) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if rows.is_empty() {
                return Err(CifmError::Data(format!("{}: empty {split} split", self.name)));
            }
            for (i, ex) in rows.iter().enumerate() {
                match (&ex.target, self.task) {
                    (Target::Class(c), TaskKind::Classification) if *c < self.labels.len() => {}
                    (Target::Scores(s), TaskKind::Regression) if s.len() == self.target_names.len() => {}
                    _ => {
                        return Err(CifmError::Data(format!(
                            "{}: {split} row {i} has a target that does not match the task",
                            self.name
                        )))
                    }
                }
            }
        }
        if self.metrics.is_empty() {
            return Err(CifmError::Data(format!("{}: no metrics declared", self.name)));
        }
        Ok(())
    }
}

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
const RESERVED: usize = 2;

/// Lowercased whitespace tokenizer with a hashed vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: usize,
    pub hash_seed: u64,
    pub max_length: usize,
    /// Prepend the `[CLS]` id (first-token pooling).
    pub cls: bool,
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashTokenizer {
    pub fn token_id(&self, token: &str) -> usize {
        RESERVED + (fnv1a(self.hash_seed, token.as_bytes()) % (self.vocab_size - RESERVED) as u64) as usize
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        if self.cls {
            ids.push(CLS_ID);
        }
        for tok in text.split_whitespace() {
            if ids.len() >= self.max_length {
                break;
            }
            ids.push(self.token_id(&tok.to_lowercase()));
        }
        if ids.is_empty() {
            // empty text still needs one live position
            ids.push(if self.cls { CLS_ID } else { PAD_ID });
        }
        ids
    }

    pub fn encode_split(&self, rows: &[Example]) -> EncodedSplit {
        EncodedSplit {
            sequences: rows.iter().map(|r| self.encode(&r.text)).collect(),
            targets: rows.iter().map(|r| r.target.clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        match self {
            BatchTargets::Classes(c) => c.len(),
            BatchTargets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One padded minibatch: `N` sequences of `seq_len` ids, a `N×L` mask and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub token_ids: Vec<usize>,
    pub mask: Matrix,
    pub seq_len: usize,
    pub targets: BatchTargets,
}

impl EncodedBatch {
    pub fn n(&self) -> usize {
        self.mask.nrows()
    }

    /// Row-major mask flattened to one entry per token position.
    pub fn flat_mask(&self) -> Vec<f64> {
        self.mask.iter().copied().collect()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let n = self.n();
        if self.token_ids.len() != n * self.seq_len || self.mask.ncols() != self.seq_len {
            return Err(CifmError::Data("batch shape mismatch".into()));
        }
        if self.targets.len() != n {
            return Err(CifmError::Data(format!("{} targets for {n} rows", self.targets.len())));
        }
        if let Some(r) = self.mask.rows().into_iter().position(|r| r.sum() <= 0.0) {
            return Err(CifmError::Data(format!("mask row {r} has no active position")));
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id >= vocab_size) {
            return Err(CifmError::Data(format!("token id {id} >= vocabulary size {vocab_size}")));
        }
        Ok(())
    }
}

/// A tokenized split, batched on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub sequences: Vec<Vec<usize>>,
    pub targets: Vec<Target>,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.sequences.iter().map(Vec::len).max().unwrap_or(1)
    }

    /// Batch of the given rows, padded to the longest row (at least `min_len`).
    pub fn batch(&self, rows: &[usize], min_len: usize) -> EncodedBatch {
        let seq_len = rows.iter().map(|&r| self.sequences[r].len()).max().unwrap_or(1).max(min_len);
        let n = rows.len();
        let mut token_ids = vec![PAD_ID; n * seq_len];
        let mut mask = Array2::zeros((n, seq_len));
        for (i, &r) in rows.iter().enumerate() {
            for (j, &id) in self.sequences[r].iter().enumerate() {
                token_ids[i * seq_len + j] = id;
                mask[[i, j]] = 1.0;
            }
        }
        let targets = match self.targets.first() {
            Some(Target::Scores(s)) => {
                let k = s.len();
                let mut v = Array2::zeros((n, k));
                for (i, &r) in rows.iter().enumerate() {
                    if let Target::Scores(s) = &self.targets[r] {
                        for (j, &x) in s.iter().enumerate() {
                            v[[i, j]] = x;
                        }
                    }
                }
                BatchTargets::Values(v)
            }
            _ => BatchTargets::Classes(
                rows.iter()
                    .map(|&r| match self.targets[r] {
                        Target::Class(c) => c,
                        Target::Scores(_) => usize::MAX,
                    })
                    .collect(),
            ),
        };
        EncodedBatch { token_ids, mask, seq_len, targets }
    }

    /// Consecutive batches in index order.
    pub fn chunks(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(cls: bool) -> HashTokenizer {
        HashTokenizer { vocab_size: 1000, hash_seed: 7, max_length: 4, cls }
    }

    #[test]
    fn hashing_is_stable_and_in_range() {
        let t = tok(false);
        let a = t.encode("Hello world hello");
        assert_eq!(a[0], a[2]);
        assert!(a.iter().all(|&i| (RESERVED..1000).contains(&i)));
        let other = HashTokenizer { hash_seed: 8, ..t.clone() };
        assert_ne!(t.encode("hello"), other.encode("hello"));
    }

    #[test]
    fn truncation_and_cls() {
        let t = tok(true);
        let ids = t.encode("a b c d e f");
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(tok(false).encode("   "), vec![PAD_ID]);
    }

    #[test]
    fn batch_padding_and_mask() {
        let t = tok(false);
        let rows = vec![
            Example { text: "a b".into(), target: Target::Class(0) },
            Example { text: "c".into(), target: Target::Class(1) },
        ];
        let split = t.encode_split(&rows);
        let b = split.batch(&[0, 1], 3);
        assert_eq!(b.seq_len, 3);
        assert_eq!(b.mask.row(1).sum(), 1.0);
        assert_eq!(b.token_ids[4], PAD_ID);
        b.validate(1000).unwrap();
        assert!(b.validate(3).is_err());
        assert_eq!(b.targets, BatchTargets::Classes(vec![0, 1]));
    }
}
