//! The training objective, in minimization form:
//!
//! ```text
//! ifm_total = label_term − β · mi_bound
//! ```
//!
//! `label_term` is CE or MSE (so its negation is the I(Y;Z) surrogate) and
//! `mi_bound` is the InfoNCE or MINE lower bound on I(X;Z). The CIM part is
//! procedural: with probability `cim.rate` the step trains on the IFM loss
//! evaluated under FGM-perturbed early-layer weights.

use cifm_autograd::{Graph, Matrix, Var};
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{BatchTargets, EncodedBatch, TaskKind};
use crate::encoder::{ForwardOptions, Model};
use crate::error::{CifmError, Result};
use crate::estimators::{infonce_graph, label_term_graph, random_permutation, InfoNceConfig, MineConfig};
use crate::perturbation::{cim_step, CimOutcome, PassResult, PerturbationSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum MiEstimator {
    #[default]
    InfoNce,
    Mine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub tau: f64,
    pub mi_estimator: MiEstimator,
    pub task_kind: TaskKind,
    /// Cosine similarity for InfoNCE.
    pub normalize: bool,
    /// InfoNCE negatives per anchor; `None` means every other row.
    pub negatives: Option<usize>,
    pub mine: MineConfig,
    pub cim: Option<PerturbationSpec>,
}

impl ObjectiveConfig {
    /// Plain CE/MSE training.
    pub fn baseline(task_kind: TaskKind) -> Self {
        ObjectiveConfig {
            beta: 0.0,
            tau: 0.1,
            mi_estimator: MiEstimator::InfoNce,
            task_kind,
            normalize: true,
            negatives: None,
            mine: MineConfig::default(),
            cim: None,
        }
    }

    /// IFM with β = 0.1, τ = 0.1 and CIM with ε = 0.1 on every step.
    pub fn cifm(task_kind: TaskKind) -> Self {
        ObjectiveConfig { beta: 0.1, cim: Some(PerturbationSpec::new(0.1, 1.0)), ..Self::baseline(task_kind) }
    }

    pub fn infonce(&self) -> InfoNceConfig {
        InfoNceConfig { temperature: self.tau, normalize: self.normalize, negatives: self.negatives }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(CifmError::Config(format!("objective.beta must be ≥ 0, got {}", self.beta)));
        }
        self.infonce().validate()?;
        if let Some(c) = &self.cim {
            c.validate()?;
        }
        Ok(())
    }

    /// Whether training needs a MINE critic attached to the model.
    pub fn needs_critic(&self) -> bool {
        self.beta > 0.0 && self.mi_estimator == MiEstimator::Mine
    }
}

/// Per-term record of one loss evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// CE or MSE on the anchor pass.
    pub label_term: f64,
    /// Value of the I(X;Z) lower bound (0 when β = 0).
    pub input_term: f64,
    /// `label_term − β·input_term` on clean weights.
    pub ifm_total: f64,
    pub cim_applied: bool,
    /// IFM loss under perturbed weights, when CIM was applied.
    pub perturbed_total: Option<f64>,
    /// The loss whose gradients the optimizer receives.
    pub grand_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.label_term.is_finite()
            && self.input_term.is_finite()
            && self.ifm_total.is_finite()
            && self.grand_total.is_finite()
            && self.perturbed_total.is_none_or(f64::is_finite)
    }

    /// Field-wise mean; `cim_applied` is true if any entry applied CIM.
    pub fn mean_of(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        let perturbed: Vec<f64> = items.iter().filter_map(|b| b.perturbed_total).collect();
        Some(LossBreakdown {
            label_term: avg(|b| b.label_term),
            input_term: avg(|b| b.input_term),
            ifm_total: avg(|b| b.ifm_total),
            cim_applied: items.iter().any(|b| b.cim_applied),
            perturbed_total: (!perturbed.is_empty()).then(|| perturbed.iter().sum::<f64>() / perturbed.len() as f64),
            grand_total: avg(|b| b.grand_total),
        })
    }
}

/// Randomness consumed by one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSeeds {
    pub anchor: u64,
    pub positive: u64,
    pub negatives: u64,
    /// Batch shuffle producing MINE's marginal samples.
    pub permutation: Vec<usize>,
}

impl StepSeeds {
    pub fn draw(rng: &mut impl Rng, n: usize) -> Self {
        StepSeeds {
            anchor: rng.random(),
            positive: rng.random(),
            negatives: rng.random(),
            permutation: random_permutation(rng, n),
        }
    }
}

struct IfmNodes {
    total: Var,
    label: Var,
    input: Option<Var>,
}

fn ifm_graph<'a>(
    g: &mut Graph<'a>,
    model: &'a Model,
    batch: &EncodedBatch,
    cfg: &ObjectiveConfig,
    seeds: &StepSeeds,
    commit: bool,
) -> Result<IfmNodes> {
    let anchor = model.forward(g, batch, ForwardOptions::train(seeds.anchor))?;
    let label = label_term_graph(g, anchor.output, &batch.targets, cfg.task_kind)?;
    if cfg.beta == 0.0 {
        return Ok(IfmNodes { total: label, label, input: None });
    }
    let bound = match cfg.mi_estimator {
        MiEstimator::InfoNce => {
            let positive = model.forward(g, batch, ForwardOptions::train(seeds.positive))?;
            infonce_graph(g, anchor.pooled, positive.pooled, &cfg.infonce(), seeds.negatives)?
        }
        MiEstimator::Mine => {
            let critic = model
                .critic
                .as_ref()
                .ok_or_else(|| CifmError::Usage("the MINE estimator needs a critic attached to the model".into()))?;
            critic.lower_bound_graph(g, anchor.x_proxy, anchor.pooled, &seeds.permutation, commit)?
        }
    };
    let scaled = g.scale(bound, cfg.beta);
    let total = g.sub(label, scaled);
    Ok(IfmNodes { total, label, input: Some(bound) })
}

fn breakdown_of(g: &Graph<'_>, nodes: &IfmNodes) -> LossBreakdown {
    let total = g.scalar_value(nodes.total);
    LossBreakdown {
        label_term: g.scalar_value(nodes.label),
        input_term: nodes.input.map_or(0.0, |v| g.scalar_value(v)),
        ifm_total: total,
        cim_applied: false,
        perturbed_total: None,
        grand_total: total,
    }
}

/// IFM loss with gradients for the model and the critic.
pub fn ifm_pass(
    model: &Model,
    batch: &EncodedBatch,
    cfg: &ObjectiveConfig,
    seeds: &StepSeeds,
    commit: bool,
) -> Result<PassResult> {
    let mut g = Graph::new();
    let nodes = ifm_graph(&mut g, model, batch, cfg, seeds, commit)?;
    let breakdown = breakdown_of(&g, &nodes);
    let grads = g.backward(nodes.total);
    let critic_grads = match (&model.critic, cfg.needs_critic()) {
        (Some(c), true) => Some(c.params.grads_from(&g, &grads)),
        _ => None,
    };
    Ok(PassResult { breakdown, grads: model.params.grads_from(&g, &grads), critic_grads })
}

/// IFM loss value. Updates the MINE moving average like a training step.
pub fn ifm_loss(model: &Model, batch: &EncodedBatch, cfg: &ObjectiveConfig, seeds: &StepSeeds) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let nodes = ifm_graph(&mut g, model, batch, cfg, seeds, true)?;
    Ok(breakdown_of(&g, &nodes))
}

/// CE/MSE of the anchor pass alone: the "without CIM and IFM" baseline.
pub fn baseline_loss(model: &Model, batch: &EncodedBatch, task_kind: TaskKind, seeds: &StepSeeds) -> Result<f64> {
    let mut g = Graph::new();
    let fv = model.forward(&mut g, batch, ForwardOptions::train(seeds.anchor))?;
    let v = label_term_graph(&mut g, fv.output, &batch.targets, task_kind)?;
    Ok(g.scalar_value(v))
}

/// Precomputed outputs of a model pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    pub logits: Matrix,
    pub anchor: Matrix,
    pub positive: Option<Matrix>,
}

/// IFM breakdown from already computed InfoNCE inputs.
pub fn ifm_loss_from_outputs(outputs: &ModelOutputs, targets: &BatchTargets, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let logits = g.constant(outputs.logits.clone());
    let label = label_term_graph(&mut g, logits, targets, cfg.task_kind)?;
    let input = if cfg.beta == 0.0 {
        None
    } else {
        if cfg.mi_estimator != MiEstimator::InfoNce {
            return Err(CifmError::Usage("precomputed outputs only support the InfoNCE estimator".into()));
        }
        let positive =
            outputs.positive.as_ref().ok_or_else(|| CifmError::Usage("InfoNCE needs a second view".into()))?;
        let a = g.constant(outputs.anchor.clone());
        let p = g.constant(positive.clone());
        Some(infonce_graph(&mut g, a, p, &cfg.infonce(), 0)?)
    };
    let total = match input {
        Some(b) => {
            let s = g.scale(b, cfg.beta);
            g.sub(label, s)
        }
        None => label,
    };
    Ok(breakdown_of(&g, &IfmNodes { total, label, input }))
}

/// One full objective step with gradients. `apply` is the step's CIM draw.
pub fn cifm_step(
    model: &mut Model,
    batch: &EncodedBatch,
    cfg: &ObjectiveConfig,
    seeds: &StepSeeds,
    apply: bool,
) -> Result<CimOutcome> {
    match &cfg.cim {
        None => {
            let pass = ifm_pass(model, batch, cfg, seeds, true)?;
            Ok(CimOutcome { breakdown: pass.breakdown, grads: pass.grads, critic_grads: pass.critic_grads, deltas: None })
        }
        Some(spec) => cim_step(model, spec, apply, |m, commit| ifm_pass(m, batch, cfg, seeds, commit)),
    }
}

/// Draw the step's CIM Bernoulli (one draw per step, even when `rate` is 0 or 1).
pub fn draw_cim(cfg: &ObjectiveConfig, rng: &mut impl Rng) -> bool {
    match &cfg.cim {
        Some(spec) => rng.random::<f64>() < spec.rate,
        None => false,
    }
}

/// CIFM loss breakdown for one step; weights are restored afterwards.
pub fn cifm_loss(
    model: &mut Model,
    batch: &EncodedBatch,
    cfg: &ObjectiveConfig,
    seeds: &StepSeeds,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    let apply = draw_cim(cfg, rng);
    Ok(cifm_step(model, batch, cfg, seeds, apply)?.breakdown)
}
