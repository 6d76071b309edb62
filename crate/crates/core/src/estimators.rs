//! Lower-bound estimators for I(X;Z) and the CE/MSE surrogate for I(Y;Z).
//!
//! Each estimator comes in a graph form (differentiable, used by the
//! objective) and a value form that builds a throwaway graph.

use std::cell::Cell;

use cifm_autograd::{Graph, Matrix, Var};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{BatchTargets, TaskKind};
use crate::error::{CifmError, Result};
use crate::params::{glorot, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoNceConfig {
    pub temperature: f64,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Number of negatives per anchor. `None` uses every other row (K = N−1).
    #[serde(default)]
    pub negatives: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        InfoNceConfig { temperature: 0.1, normalize: true, negatives: None }
    }
}

impl InfoNceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(CifmError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    fn k(&self, n: usize) -> Result<usize> {
        match self.negatives {
            None if n < 2 => Err(CifmError::InvalidBatch(format!("InfoNCE needs at least 2 rows, got {n}"))),
            None => Ok(n - 1),
            Some(k) if k + 1 > n => {
                Err(CifmError::InvalidBatch(format!("{k} negatives requested from a batch of {n}")))
            }
            Some(k) => Ok(k),
        }
    }
}

/// Two representation matrices of the same samples from independent stochastic passes.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub anchor: Matrix,
    pub positive: Matrix,
}

impl ViewPair {
    pub fn new(anchor: Matrix, positive: Matrix) -> Result<Self> {
        if anchor.dim() != positive.dim() {
            return Err(CifmError::InvalidBatch(format!(
                "view shapes differ: {:?} vs {:?}",
                anchor.dim(),
                positive.dim()
            )));
        }
        Ok(ViewPair { anchor, positive })
    }
}

/// Additive mask keeping the diagonal and `k` random off-diagonal entries per row.
fn negative_mask(n: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::from_elem((n, n), f64::NEG_INFINITY);
    for i in 0..n {
        m[[i, i]] = 0.0;
        for j in sample(&mut rng, n - 1, k) {
            let j = if j >= i { j + 1 } else { j };
            m[[i, j]] = 0.0;
        }
    }
    m
}

/// InfoNCE bound on graph nodes. `seed` only matters when negatives are subsampled.
pub fn infonce_graph(g: &mut Graph<'_>, anchor: Var, positive: Var, cfg: &InfoNceConfig, seed: u64) -> Result<Var> {
    cfg.validate()?;
    let (n, d) = g.shape(anchor);
    if g.shape(positive) != (n, d) {
        return Err(CifmError::InvalidBatch("anchor and positive shapes differ".into()));
    }
    let k = cfg.k(n)?;
    let (a, p) = if cfg.normalize { (g.normalize_rows(anchor), g.normalize_rows(positive)) } else { (anchor, positive) };
    let pt = g.transpose(p);
    let sim = g.matmul(a, pt);
    let mut logits = g.scale(sim, 1.0 / cfg.temperature);
    if k + 1 < n {
        let mask = g.constant(negative_mask(n, k, seed));
        logits = g.add(logits, mask);
    }
    let logp = g.log_softmax(logits);
    let diag: Vec<usize> = (0..n).collect();
    let pos = g.pick(logp, &diag);
    let mean = g.mean(pos);
    Ok(g.add_scalar(mean, ((k + 1) as f64).ln()))
}

pub fn infonce_lower_bound(pair: &ViewPair, cfg: &InfoNceConfig) -> Result<f64> {
    infonce_lower_bound_seeded(pair, cfg, 0)
}

pub fn infonce_lower_bound_seeded(pair: &ViewPair, cfg: &InfoNceConfig, seed: u64) -> Result<f64> {
    if pair.anchor.dim() != pair.positive.dim() {
        return Err(CifmError::InvalidBatch("anchor and positive shapes differ".into()));
    }
    let mut g = Graph::new();
    let a = g.constant(pair.anchor.clone());
    let p = g.constant(pair.positive.clone());
    let v = infonce_graph(&mut g, a, p, cfg, seed)?;
    Ok(g.scalar_value(v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_ema")]
    pub ema_rate: f64,
    /// Critic learning rate; `None` reuses the encoder's.
    #[serde(default)]
    pub critic_lr: Option<f64>,
}

fn default_hidden() -> usize {
    64
}

fn default_ema() -> f64 {
    0.99
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig { hidden: default_hidden(), ema_rate: default_ema(), critic_lr: None }
    }
}

/// Two-hidden-layer scorer `T(x, z)` plus the moving-average denominator.
///
/// The moving average lives in a `Cell` so the bound can be taken through a
/// shared reference while the critic's tensors are borrowed by a graph.
#[derive(Clone, Debug)]
pub struct MineCritic {
    pub params: ParamStore,
    pub ema_rate: f64,
    log_ema: Cell<Option<f64>>,
}

impl PartialEq for MineCritic {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.ema_rate == other.ema_rate && self.log_ema.get() == other.log_ema.get()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl MineCritic {
    pub fn new(x_dim: usize, z_dim: usize, hidden: usize, ema_rate: f64, seed: u64) -> Result<Self> {
        if !(ema_rate > 0.0 && ema_rate < 1.0) {
            return Err(CifmError::Config(format!("ema_rate must be in (0,1), got {ema_rate}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("critic.w0", glorot(&mut rng, x_dim + z_dim, hidden));
        params.insert("critic.b0", Array2::zeros((1, hidden)));
        params.insert("critic.w1", glorot(&mut rng, hidden, hidden));
        params.insert("critic.b1", Array2::zeros((1, hidden)));
        params.insert("critic.w2", glorot(&mut rng, hidden, 1));
        params.insert("critic.b2", Array2::zeros((1, 1)));
        Ok(MineCritic { params, ema_rate, log_ema: Cell::new(None) })
    }

    /// Current denominator `exp(log_ema)`, once the first update has happened.
    pub fn ema_denominator(&self) -> Option<f64> {
        self.log_ema.get().map(f64::exp)
    }

    pub fn reset_ema(&self) {
        self.log_ema.set(None);
    }

    /// Moving average in log space, for persistence.
    pub fn log_ema(&self) -> Option<f64> {
        self.log_ema.get()
    }

    pub fn set_log_ema(&self, v: Option<f64>) {
        self.log_ema.set(v);
    }

    /// Critic scores for row-aligned `x` and `z`, shape `N×1`.
    pub fn score<'a>(&'a self, g: &mut Graph<'a>, x: Var, z: Var) -> Var {
        let p: Vec<Var> = (0..self.params.len()).map(|i| self.params.bind(g, i)).collect();
        let xz = g.concat_cols(&[x, z]);
        let h = g.matmul(xz, p[0]);
        let h = g.add_row(h, p[1]);
        let h = g.relu(h);
        let h = g.matmul(h, p[2]);
        let h = g.add_row(h, p[3]);
        let h = g.relu(h);
        let t = g.matmul(h, p[4]);
        g.add_row(t, p[5])
    }

    /// `mean T(x, z) − log mean exp T(x, z[perm])`.
    ///
    /// The gradient of the log term uses the moving-average denominator,
    /// updated with this batch first. With `commit = false` the updated value
    /// is used for the gradient but not stored.
    pub fn lower_bound_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        z: Var,
        perm: &[usize],
        commit: bool,
    ) -> Result<Var> {
        let (n, _) = g.shape(z);
        if n < 2 {
            return Err(CifmError::InvalidBatch(format!("MINE needs at least 2 rows, got {n}")));
        }
        if g.shape(x).0 != n || perm.len() != n {
            return Err(CifmError::InvalidBatch("x, z and permutation must be row-aligned".into()));
        }
        let joint = self.score(g, x, z);
        let zs = g.rows(z, perm);
        let marg = self.score(g, x, zs);
        let batch_lme = {
            let v = g.value(marg);
            let max = v.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
            max + v.iter().map(|&a| (a - max).exp()).sum::<f64>().ln() - (n as f64).ln()
        };
        if !batch_lme.is_finite() {
            return Err(CifmError::Numeric("critic produced a non-finite score".into()));
        }
        let log_ema = match self.log_ema.get() {
            None => batch_lme,
            Some(prev) => log_add_exp(self.ema_rate.ln() + prev, (1.0 - self.ema_rate).ln() + batch_lme),
        };
        if commit {
            self.log_ema.set(Some(log_ema));
        }
        let t_joint = g.mean(joint);
        let lme = g.log_mean_exp(marg, Some(log_ema));
        Ok(g.sub(t_joint, lme))
    }

    /// Bound value on fixed data without touching the moving average.
    pub fn estimate(&self, x: &Matrix, z: &Matrix, perm: &[usize]) -> Result<f64> {
        let saved = self.log_ema.get();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let zv = g.constant(z.clone());
        let v = self.lower_bound_graph(&mut g, xv, zv, perm, false)?;
        self.log_ema.set(saved);
        Ok(g.scalar_value(v))
    }

    /// Fit the critic alone on fixed samples by ascending the bound; returns
    /// the final full-sample estimate averaged over `eval_shuffles` permutations.
    pub fn fit(&mut self, x: &Matrix, z: &Matrix, fit: &CriticFit) -> Result<f64> {
        let n = x.nrows();
        if z.nrows() != n {
            return Err(CifmError::InvalidBatch("x and z must be row-aligned".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
        let mut opt = crate::optim::Adamax::new(crate::optim::AdamaxConfig { lr: fit.lr, ..Default::default() });
        let bs = fit.batch_size.min(n);
        for _ in 0..fit.steps {
            let rows: Vec<usize> = sample(&mut rng, n, bs).into_vec();
            let perm = random_permutation(&mut rng, bs);
            let xb = x.select(ndarray::Axis(0), &rows);
            let zb = z.select(ndarray::Axis(0), &rows);
            let grads = {
                let mut g = Graph::new();
                let xv = g.constant(xb);
                let zv = g.constant(zb);
                let mi = self.lower_bound_graph(&mut g, xv, zv, &perm, true)?;
                let loss = g.scale(mi, -1.0);
                let gr = g.backward(loss);
                self.params.grads_from(&g, &gr)
            };
            opt.step(&mut self.params, &grads)?;
        }
        let mut total = 0.0;
        for _ in 0..fit.eval_shuffles.max(1) {
            let perm = random_permutation(&mut rng, n);
            total += self.estimate(x, z, &perm)?;
        }
        Ok(total / fit.eval_shuffles.max(1) as f64)
    }
}

/// Schedule for [`MineCritic::fit`].
#[derive(Clone, Debug, PartialEq)]
pub struct CriticFit {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_shuffles: usize,
    pub seed: u64,
}

impl Default for CriticFit {
    fn default() -> Self {
        CriticFit { steps: 3000, batch_size: 512, lr: 2e-3, eval_shuffles: 5, seed: 0 }
    }
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(p.as_mut_slice(), rng);
    p
}

/// MINE bound value for a critic; updates the moving average like a training step would.
pub fn mine_lower_bound(x_features: &Matrix, z: &Matrix, critic: &MineCritic, perm: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x_features.clone());
    let zv = g.constant(z.clone());
    let v = critic.lower_bound_graph(&mut g, xv, zv, perm, true)?;
    Ok(g.scalar_value(v))
}

/// Labels with the model outputs they are scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub targets: BatchTargets,
    pub outputs: Matrix,
}

fn check_targets(outputs: &Matrix, targets: &BatchTargets, kind: TaskKind) -> Result<()> {
    if outputs.iter().any(|v| v.is_nan()) {
        return Err(CifmError::Numeric("NaN in logits or predictions".into()));
    }
    if targets.len() != outputs.nrows() {
        return Err(CifmError::Data(format!("{} targets for {} output rows", targets.len(), outputs.nrows())));
    }
    match (targets, kind) {
        (BatchTargets::Classes(c), TaskKind::Classification) => {
            if let Some(&bad) = c.iter().find(|&&c| c >= outputs.ncols()) {
                return Err(CifmError::Data(format!("label {bad} out of range for {} classes", outputs.ncols())));
            }
        }
        (BatchTargets::Values(v), TaskKind::Regression) => {
            if v.ncols() != outputs.ncols() {
                return Err(CifmError::Data(format!(
                    "target width {} does not match prediction width {}",
                    v.ncols(),
                    outputs.ncols()
                )));
            }
        }
        _ => return Err(CifmError::Data("target type does not match the task kind".into())),
    }
    Ok(())
}

/// Mean cross-entropy (classification) or mean squared error summed over
/// target dimensions (regression). Minimized during training.
pub fn label_term_graph(g: &mut Graph<'_>, outputs: Var, targets: &BatchTargets, kind: TaskKind) -> Result<Var> {
    check_targets(g.value(outputs), targets, kind)?;
    Ok(match targets {
        BatchTargets::Classes(c) => {
            let logp = g.log_softmax(outputs);
            let picked = g.pick(logp, c);
            let m = g.mean(picked);
            g.scale(m, -1.0)
        }
        BatchTargets::Values(v) => {
            let n = v.nrows() as f64;
            let t = g.constant(v.clone());
            let r = g.sub(outputs, t);
            let sq = g.mul(r, r);
            let s = g.sum(sq);
            g.scale(s, 1.0 / n)
        }
    })
}

pub fn label_info_lower_bound(batch: &TargetBatch, kind: TaskKind) -> Result<f64> {
    let mut g = Graph::new();
    let o = g.constant(batch.outputs.clone());
    let v = label_term_graph(&mut g, o, &batch.targets, kind)?;
    Ok(g.scalar_value(v))
}
