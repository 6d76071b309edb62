//! Adamax with L2 weight decay and optional global-norm clipping.

use cifm_autograd::Matrix;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{CifmError, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamaxConfig {
    pub lr: f64,
    #[serde(default = "b1")]
    pub beta1: f64,
    #[serde(default = "b2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Clip the global gradient norm to this value before the update.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn b1() -> f64 {
    0.9
}
fn b2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        AdamaxConfig { lr: 2e-3, beta1: b1(), beta2: b2(), eps: eps(), weight_decay: 0.0, clip_norm: None }
    }
}

#[derive(Clone, Debug)]
pub struct Adamax {
    pub config: AdamaxConfig,
    t: u64,
    m: Vec<Matrix>,
    u: Vec<Matrix>,
}

impl Adamax {
    pub fn new(config: AdamaxConfig) -> Self {
        Adamax { config, t: 0, m: Vec::new(), u: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(CifmError::Consistency(format!("{} gradients for {} tensors", grads.len(), params.len())));
        }
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|p| Array2::zeros(p.dim())).collect();
            self.u = self.m.clone();
        }
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max {
                    max / (norm + 1e-6)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let step = c.lr / (1.0 - c.beta1.powi(self.t as i32));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            Zip::from(p)
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.u[i])
                .for_each(|p, &g, m, u| {
                    let g = g * scale + c.weight_decay * *p;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *u = (c.beta2 * *u).max(g.abs() + c.eps);
                    *p -= step * *m / *u;
                });
        }
        Ok(())
    }
}
