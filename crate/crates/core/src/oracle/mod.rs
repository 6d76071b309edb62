//! Ground truth for tests: closed-form and enumerated mutual information,
//! correlated Gaussian samples, and synthetic corpora with planted structure.
//!
//! Nothing here reuses estimator code paths.

mod corpus;

pub use corpus::{make_synthetic_corpus, make_synthetic_corpus_sized, CorpusSize, SyntheticCorpus, SyntheticKind};

use cifm_autograd::Matrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CifmError, Result};

/// MI in nats of a bivariate Gaussian with correlation `rho`: `−½·ln(1 − ρ²)`.
pub fn gaussian_mi(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(CifmError::Domain(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

/// Plug-in MI in nats of an empirical joint count table, by full enumeration.
pub fn discrete_mi_bruteforce(joint_counts: &[Vec<f64>]) -> Result<f64> {
    let total: f64 = joint_counts.iter().flatten().sum();
    if joint_counts.iter().flatten().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(CifmError::Usage("counts must be finite and non-negative".into()));
    }
    if total <= 0.0 {
        return Err(CifmError::Usage("count table is all zero".into()));
    }
    let cols = joint_counts.iter().map(Vec::len).max().unwrap_or(0);
    let row_marg: Vec<f64> = joint_counts.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let col_marg: Vec<f64> = (0..cols)
        .map(|j| joint_counts.iter().map(|r| r.get(j).copied().unwrap_or(0.0)).sum::<f64>() / total)
        .collect();
    let mut mi = 0.0;
    for (i, row) in joint_counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let p = c / total;
                mi += p * (p / (row_marg[i] * col_marg[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `n` draws of `(x, z)` with unit variances and correlation `rho`, as two `n×1` columns.
pub fn correlated_gaussians(n: usize, rho: f64, seed: u64) -> Result<(Matrix, Matrix)> {
    gaussian_mi(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 1));
    let mut z = Array2::zeros((n, 1));
    let s = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = a;
        z[[i, 0]] = rho * a + s * b;
    }
    Ok((x, z))
}
