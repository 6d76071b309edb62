use std::fmt::Write as _;

use cifm_autograd::{Graph, Matrix};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EncodedBatch, Split, TaskKind};
use crate::encoder::{ForwardOptions, Model};
use crate::error::{CifmError, Result};
use crate::estimators::label_term_graph;
use crate::metrics::evaluate;
use crate::perturbation::{test_time_perturb, NoiseKind};
use crate::trainer::{evaluate_encoded, gold_of, run_split, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub kind: NoiseKind,
    #[serde(default = "default_strengths")]
    pub strengths: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_strengths() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl SweepSpec {
    pub fn new(kind: NoiseKind) -> Self {
        SweepSpec { kind, strengths: default_strengths(), seeds: default_seeds() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strengths.is_empty() || self.seeds.is_empty() {
            return Err(CifmError::Config("sweep needs strengths and seeds".into()));
        }
        if self.strengths.iter().any(|s| !(*s >= 0.0)) || self.strengths.windows(2).any(|w| w[0] > w[1]) {
            return Err(CifmError::Config("sweep strengths must be non-negative and ascending".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub strength: f64,
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
    pub headline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub kind: NoiseKind,
    pub points: Vec<SweepPoint>,
    /// Strength → headline averaged over seeds.
    pub mean: Vec<(f64, f64)>,
}

impl SweepCurve {
    /// Headline values of one seed, in strength order.
    pub fn seed_curve(&self, seed: u64) -> Vec<f64> {
        self.points.iter().filter(|p| p.seed == seed).map(|p| p.headline).collect()
    }

    /// Plot-ready rows: `strength,seed,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strength,seed,metric,value\n");
        for p in &self.points {
            for (name, v) in &p.metrics {
                let _ = writeln!(out, "{},{},{},{}", p.strength, p.seed, name, v);
            }
        }
        out
    }
}

/// Gradient of the clean model's label loss w.r.t. the embedding-layer output.
pub fn adversarial_gradient(model: &Model, batch: &EncodedBatch, task: TaskKind) -> Result<Matrix> {
    let mut g = Graph::new();
    let fv = model.forward(&mut g, batch, ForwardOptions::eval())?;
    let loss = label_term_graph(&mut g, fv.output, &batch.targets, task)?;
    let grads = g.backward(loss);
    Ok(grads.get(fv.embeddings).cloned().unwrap_or_else(|| Matrix::zeros(g.value(fv.embeddings).dim())))
}

/// Robust scores on the test split for every `(strength, seed)`.
///
/// Strength 0 runs the standard evaluation path, so it equals the clean
/// test metric exactly.
pub fn robustness_sweep(model: &Model, dataset: &Dataset, spec: &SweepSpec, cfg: &TrainConfig) -> Result<SweepCurve> {
    spec.validate()?;
    let enc = model.config.tokenizer(cfg.max_length).encode_split(dataset.split(Split::Test));
    let gold = gold_of(&enc.targets, dataset.task)?;
    let mut points = Vec::new();
    for &strength in &spec.strengths {
        for &seed in &spec.seeds {
            let report = if strength == 0.0 {
                evaluate_encoded(model, dataset, &enc, cfg.eval_batch_size)?
            } else {
                let mut perturb = |bi: usize, batch: &EncodedBatch, clean: Matrix| -> Result<Matrix> {
                    let grad = match spec.kind {
                        NoiseKind::Adversarial => Some(adversarial_gradient(model, batch, dataset.task)?),
                        NoiseKind::Random => None,
                    };
                    let mask = batch.flat_mask();
                    let noise_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (bi as u64) ^ strength.to_bits();
                    test_time_perturb(&clean, batch.seq_len, Some(&mask), spec.kind, strength, grad.as_ref(), noise_seed)
                };
                let out = run_split(model, &enc, dataset.task, cfg.eval_batch_size, Some(&mut perturb))?;
                evaluate(&dataset.metrics, &dataset.labels, &gold, &out.predictions)?
            };
            points.push(SweepPoint { strength, seed, headline: report.headline(), metrics: report.metrics });
        }
    }
    let mean = spec
        .strengths
        .iter()
        .map(|&s| {
            let vals: Vec<f64> = points.iter().filter(|p| p.strength == s).map(|p| p.headline).collect();
            (s, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    Ok(SweepCurve { kind: spec.kind, points, mean })
}
