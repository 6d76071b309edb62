//! Norm-bounded worst-case weight perturbations for training, and
//! embedding-space perturbations for robustness evaluation.

use cifm_autograd::Matrix;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{CifmError, Result};
use crate::objective::LossBreakdown;
use crate::params::ParamStore;

pub const GRAD_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    #[default]
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    #[serde(default)]
    pub norm: NormOrder,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub rate: f64,
    #[serde(default = "default_groups")]
    pub target_groups: Vec<String>,
    /// Train on `clean + weight·perturbed` instead of the perturbed loss alone.
    #[serde(default)]
    pub weight: Option<f64>,
}

fn one() -> f64 {
    1.0
}

pub fn default_groups() -> Vec<String> {
    vec!["embedding".into(), "layer.0".into()]
}

impl PerturbationSpec {
    pub fn new(epsilon: f64, rate: f64) -> Self {
        PerturbationSpec { norm: NormOrder::L2, epsilon, rate, target_groups: default_groups(), weight: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CifmError::Config(format!("cim.epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(CifmError::Config(format!("cim.rate must be in [0,1], got {}", self.rate)));
        }
        if self.target_groups.is_empty() {
            return Err(CifmError::Config("cim.target_groups is empty".into()));
        }
        if let Some(w) = self.weight {
            if !(w >= 0.0) {
                return Err(CifmError::Config(format!("cim.weight must be ≥ 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Tensors of one parameter group, keyed by their index in the store.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupTensors {
    pub group: String,
    pub tensors: Vec<(usize, Matrix)>,
}

impl GroupTensors {
    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

/// Gradient of the log-likelihood on each target group.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSnapshot {
    pub groups: Vec<GroupTensors>,
}

impl GradientSnapshot {
    /// Capture `grads` (indexed like `params`) for the named groups.
    pub fn capture(params: &ParamStore, grads: &[Matrix], groups: &[String]) -> Result<Self> {
        let mut out = Vec::with_capacity(groups.len());
        for name in groups {
            let idx = params.resolve_groups(std::slice::from_ref(name))?;
            let tensors = idx
                .into_iter()
                .map(|i| {
                    let g = &grads[i];
                    if g.dim() != params.get(i).dim() {
                        return Err(CifmError::Consistency(format!("gradient shape mismatch for {}", params.names()[i])));
                    }
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(CifmError::Numeric(format!("non-finite gradient in {}", params.names()[i])));
                    }
                    Ok((i, g.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(GroupTensors { group: name.clone(), tensors });
        }
        Ok(GradientSnapshot { groups: out })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deltas {
    pub groups: Vec<GroupTensors>,
    /// Every group had a zero gradient.
    pub degenerate: bool,
}

/// `δ = −ε·g / max(‖g‖₂, floor)` per group.
pub fn fgm_delta(g: &GradientSnapshot, spec: &PerturbationSpec) -> Deltas {
    let mut degenerate = true;
    let groups = g
        .groups
        .iter()
        .map(|grp| {
            let norm = grp.norm();
            if norm > 0.0 {
                degenerate = false;
            }
            let c = -spec.epsilon / norm.max(GRAD_NORM_FLOOR);
            GroupTensors { group: grp.group.clone(), tensors: grp.tensors.iter().map(|(i, t)| (*i, t * c)).collect() }
        })
        .collect();
    Deltas { groups, degenerate }
}

/// One IFM evaluation with gradients, as produced by the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PassResult {
    pub breakdown: LossBreakdown,
    /// Loss gradients for every model tensor.
    pub grads: Vec<Matrix>,
    /// Loss gradients for the MINE critic, when one is used.
    pub critic_grads: Option<Vec<Matrix>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CimOutcome {
    /// Breakdown of the trained-on loss; its gradients are in `grads`.
    pub breakdown: LossBreakdown,
    pub grads: Vec<Matrix>,
    pub critic_grads: Option<Vec<Matrix>>,
    pub deltas: Option<Deltas>,
}

fn combine(a: &[Matrix], b: &[Matrix], w: f64) -> Vec<Matrix> {
    a.iter().zip(b).map(|(x, y)| x + &(y * w)).collect()
}

/// One CIM training step around `ifm`.
///
/// `ifm(model, commit)` evaluates the IFM loss and its gradients; `commit`
/// says whether estimator state (the MINE moving average) should be updated.
/// With `apply = false` this is the clean pass. Otherwise the clean gradient
/// is turned into an FGM delta on the target groups, the loss is recomputed
/// under `θ + δ`, and the exact pre-perturbation weights are restored before
/// returning. The optimizer step therefore sees `θ` with perturbed gradients.
pub fn cim_step<F>(model: &mut Model, spec: &PerturbationSpec, apply: bool, mut ifm: F) -> Result<CimOutcome>
where
    F: FnMut(&Model, bool) -> Result<PassResult>,
{
    let clean = ifm(model, !apply)?;
    if !apply {
        return Ok(CimOutcome { breakdown: clean.breakdown, grads: clean.grads, critic_grads: clean.critic_grads, deltas: None });
    }
    let loglik: Vec<Matrix> = clean.grads.iter().map(|g| -g).collect();
    let snapshot = GradientSnapshot::capture(&model.params, &loglik, &spec.target_groups)?;
    let deltas = fgm_delta(&snapshot, spec);
    let touched: Vec<usize> = deltas.groups.iter().flat_map(|grp| grp.tensors.iter().map(|(i, _)| *i)).collect();
    let before = model.params.checksum_of(&touched);
    let saved: Vec<(usize, Matrix)> = touched.iter().map(|&i| (i, model.params.get(i).clone())).collect();
    for grp in &deltas.groups {
        for (i, d) in &grp.tensors {
            *model.params.get_mut(*i) += d;
        }
    }
    let perturbed = ifm(model, true);
    for (i, t) in saved {
        *model.params.get_mut(i) = t;
    }
    if model.params.checksum_of(&touched) != before {
        return Err(CifmError::Consistency("weights differ after restoring the perturbation".into()));
    }
    let perturbed = perturbed?;
    let mut breakdown = clean.breakdown.clone();
    breakdown.cim_applied = true;
    breakdown.perturbed_total = Some(perturbed.breakdown.ifm_total);
    let (grads, critic_grads) = match spec.weight {
        None => {
            breakdown.grand_total = perturbed.breakdown.ifm_total;
            (perturbed.grads, perturbed.critic_grads)
        }
        Some(w) => {
            breakdown.grand_total = clean.breakdown.ifm_total + w * perturbed.breakdown.ifm_total;
            let critic = match (&clean.critic_grads, &perturbed.critic_grads) {
                (Some(a), Some(b)) => Some(combine(a, b, w)),
                _ => None,
            };
            (combine(&clean.grads, &perturbed.grads, w), critic)
        }
    };
    Ok(CimOutcome { breakdown, grads, critic_grads, deltas: Some(deltas) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Random,
    Adversarial,
}

/// Perturb embeddings sample by sample.
///
/// `embeddings` holds `rows_per_sample` consecutive rows per sample. The
/// shift of each sample has L2 norm `strength` over its active rows (all rows
/// when `active` is `None`). Random shifts are rescaled Gaussian noise;
/// adversarial shifts follow `grad` (ascent direction).
pub fn test_time_perturb(
    embeddings: &Matrix,
    rows_per_sample: usize,
    active: Option<&[f64]>,
    kind: NoiseKind,
    strength: f64,
    grad: Option<&Matrix>,
    seed: u64,
) -> Result<Matrix> {
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(CifmError::Usage(format!("strength must be ≥ 0, got {strength}")));
    }
    let (rows, cols) = embeddings.dim();
    if rows_per_sample == 0 || rows % rows_per_sample != 0 {
        return Err(CifmError::Usage(format!("{rows} rows do not split into samples of {rows_per_sample}")));
    }
    if active.is_some_and(|a| a.len() != rows) {
        return Err(CifmError::Usage("active mask length differs from the row count".into()));
    }
    let direction = match kind {
        NoiseKind::Adversarial => {
            let g = grad.ok_or_else(|| CifmError::Usage("adversarial perturbation needs a gradient".into()))?;
            if g.dim() != (rows, cols) {
                return Err(CifmError::Usage(format!("gradient shape {:?} differs from {:?}", g.dim(), (rows, cols))));
            }
            g.clone()
        }
        NoiseKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
        }
    };
    let mut out = embeddings.clone();
    if strength == 0.0 {
        return Ok(out);
    }
    let mut dir = direction;
    if let Some(a) = active {
        for (mut row, &m) in dir.rows_mut().into_iter().zip(a) {
            if m == 0.0 {
                row.fill(0.0);
            }
        }
    }
    for s_idx in 0..rows / rows_per_sample {
        let r = s_idx * rows_per_sample..(s_idx + 1) * rows_per_sample;
        let block = dir.slice(s![r.clone(), ..]);
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= GRAD_NORM_FLOOR {
            continue;
        }
        let shift = &block * (strength / norm);
        let mut target = out.slice_mut(s![r, ..]);
        target += &shift;
    }
    Ok(out)
}
