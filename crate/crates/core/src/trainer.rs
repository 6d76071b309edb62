//! Training loop: Adamax, validation-driven early stopping, best-epoch
//! restoration and multi-seed aggregation.

use std::time::Instant;

use cifm_autograd::{Graph, Matrix};
use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EncodedSplit, Split, Target, TaskKind};
use crate::encoder::{ForwardOptions, Model};
use crate::error::{CifmError, Result};
use crate::metrics::{evaluate, MetricReport, Predictions, SeedStats};
use crate::objective::{cifm_step, draw_cim, LossBreakdown, ObjectiveConfig, StepSeeds};
use crate::optim::{Adamax, AdamaxConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_batch")]
    pub max_length: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
}

fn d_epochs() -> usize {
    20
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    5e-5
}
fn d_patience() -> usize {
    5
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_eval_batch() -> usize {
    256
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: d_epochs(),
            batch_size: d_batch(),
            max_length: d_batch(),
            lr: d_lr(),
            weight_decay: 0.0,
            patience: d_patience(),
            seeds: d_seeds(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            clip_norm: None,
            eval_batch_size: d_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_length", self.max_length),
            ("patience", self.patience),
            ("eval_batch_size", self.eval_batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CifmError::Config(format!("train.{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CifmError::Config("train.lr must be > 0 and weight_decay ≥ 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(CifmError::Config("train.seeds is empty".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(CifmError::Config("train.clip_norm must be > 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self, lr: f64) -> AdamaxConfig {
        AdamaxConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean breakdown over the epoch's steps.
    pub train: LossBreakdown,
    /// `grand_total` of every step.
    pub step_totals: Vec<f64>,
    pub cim_steps: usize,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val: f64,
    pub test: MetricReport,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
}

impl PartialEq for RunRecord {
    /// Equality ignores wall-clock time.
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val == other.best_val
            && self.test == other.test
            && self.stopped_early == other.stopped_early
    }
}

/// A finished run with the restored best-epoch model.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub record: RunRecord,
    pub model: Model,
}

/// Predictions and pooled representations for a whole split, in row order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutputs {
    pub predictions: Predictions,
    pub outputs: Matrix,
    pub pooled: Matrix,
}

pub fn gold_of(targets: &[Target], task: TaskKind) -> Result<Predictions> {
    Ok(match task {
        TaskKind::Classification => Predictions::Classes(
            targets
                .iter()
                .map(|t| match t {
                    Target::Class(c) => Ok(*c),
                    Target::Scores(_) => Err(CifmError::Data("score target in a classification split".into())),
                })
                .collect::<Result<_>>()?,
        ),
        TaskKind::Regression => {
            let rows: Vec<Vec<f64>> = targets
                .iter()
                .map(|t| match t {
                    Target::Scores(s) => Ok(s.clone()),
                    Target::Class(_) => Err(CifmError::Data("class target in a regression split".into())),
                })
                .collect::<Result<_>>()?;
            let k = rows.first().map_or(0, Vec::len);
            Predictions::Values(
                ndarray::Array2::from_shape_vec((rows.len(), k), rows.into_iter().flatten().collect())
                    .map_err(|e| CifmError::Data(e.to_string()))?,
            )
        }
    })
}

pub fn predictions_from(outputs: &Matrix, task: TaskKind) -> Predictions {
    match task {
        TaskKind::Classification => Predictions::Classes(crate::metrics::argmax_rows(outputs)),
        TaskKind::Regression => Predictions::Values(outputs.clone()),
    }
}

/// Dropout-free pass over a split in consecutive batches.
///
/// `embed` optionally rewrites each batch's embedding-layer output; it
/// receives the batch index, the batch and the clean embeddings.
pub fn run_split(
    model: &Model,
    split: &EncodedSplit,
    task: TaskKind,
    batch_size: usize,
    mut embed: Option<&mut dyn FnMut(usize, &crate::data::EncodedBatch, Matrix) -> Result<Matrix>>,
) -> Result<SplitOutputs> {
    let mut outs = Vec::new();
    let mut pooled = Vec::new();
    for (bi, rows) in split.chunks(batch_size).into_iter().enumerate() {
        let batch = split.batch(&rows, 1);
        let replaced = match embed.as_mut() {
            Some(f) => Some(f(bi, &batch, model.embed(&batch)?)?),
            None => None,
        };
        let mut g = Graph::new();
        let opts = ForwardOptions {
            dropout_seed: None,
            embedding: match &replaced {
                Some(m) => crate::encoder::EmbeddingInput::Replace(m),
                None => crate::encoder::EmbeddingInput::Lookup,
            },
        };
        let fv = model.forward(&mut g, &batch, opts)?;
        outs.push(g.value(fv.output).clone());
        pooled.push(g.value(fv.pooled).clone());
    }
    let cat = |parts: &[Matrix]| -> Result<Matrix> {
        let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| CifmError::Data(e.to_string()))
    };
    if outs.is_empty() {
        return Err(CifmError::Usage("empty split".into()));
    }
    let outputs = cat(&outs)?;
    Ok(SplitOutputs { predictions: predictions_from(&outputs, task), outputs, pooled: cat(&pooled)? })
}

/// Declared metrics of a dataset split.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split, cfg: &TrainConfig) -> Result<MetricReport> {
    let enc = model.config.tokenizer(cfg.max_length).encode_split(dataset.split(split));
    evaluate_encoded(model, dataset, &enc, cfg.eval_batch_size)
}

pub fn evaluate_encoded(model: &Model, dataset: &Dataset, enc: &EncodedSplit, batch_size: usize) -> Result<MetricReport> {
    let out = run_split(model, enc, dataset.task, batch_size, None)?;
    let gold = gold_of(&enc.targets, dataset.task)?;
    evaluate(&dataset.metrics, &dataset.labels, &gold, &out.predictions)
}

/// Shuffled minibatches; a trailing single row joins the previous batch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

pub type ModelFactory<'f> = dyn Fn(u64) -> Result<Model> + 'f;
pub type Validator<'v> = dyn FnMut(&Model, usize) -> Result<f64> + 'v;

pub fn train(
    factory: &ModelFactory<'_>,
    dataset: &Dataset,
    objective: &ObjectiveConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedRun> {
    let tok_len = cfg.max_length;
    let mut validator = |m: &Model, _epoch: usize| -> Result<f64> {
        let enc = m.config.tokenizer(tok_len).encode_split(&dataset.val);
        Ok(evaluate_encoded(m, dataset, &enc, cfg.eval_batch_size)?.headline())
    };
    train_with_validator(factory, dataset, objective, cfg, seed, &mut validator)
}

/// [`train`] with a custom validation score (higher is better).
pub fn train_with_validator(
    factory: &ModelFactory<'_>,
    dataset: &Dataset,
    objective: &ObjectiveConfig,
    cfg: &TrainConfig,
    seed: u64,
    validator: &mut Validator<'_>,
) -> Result<TrainedRun> {
    let start = Instant::now();
    cfg.validate()?;
    objective.validate()?;
    dataset.validate()?;
    if objective.task_kind != dataset.task {
        return Err(CifmError::Config(format!(
            "objective task kind {:?} does not match dataset {:?}",
            objective.task_kind, dataset.task
        )));
    }
    let mut model = factory(seed)?;
    if model.num_outputs != dataset.num_outputs() {
        return Err(CifmError::Config(format!(
            "model has {} outputs, dataset needs {}",
            model.num_outputs,
            dataset.num_outputs()
        )));
    }
    if objective.needs_critic() && model.critic.is_none() {
        model.attach_critic(&objective.mine, seed)?;
    }
    let train_enc = model.config.tokenizer(cfg.max_length).encode_split(&dataset.train);
    if train_enc.len() < 2 {
        return Err(CifmError::Data("training split needs at least 2 rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x7261);
    let mut opt = Adamax::new(cfg.optimizer(cfg.lr));
    let mut critic_opt = Adamax::new(cfg.optimizer(objective.mine.critic_lr.unwrap_or(cfg.lr)));
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let mut breakdowns = Vec::new();
        let mut cim_steps = 0;
        for (step, rows) in epoch_batches(train_enc.len(), cfg.batch_size, &mut rng).into_iter().enumerate() {
            let batch = train_enc.batch(&rows, 1);
            let seeds = StepSeeds::draw(&mut rng, rows.len());
            let apply = draw_cim(objective, &mut rng);
            let out = cifm_step(&mut model, &batch, objective, &seeds, apply)?;
            if !out.breakdown.is_finite() || out.grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(CifmError::NonFiniteLoss { epoch, step, breakdown: Box::new(out.breakdown) });
            }
            opt.step(&mut model.params, &out.grads)?;
            if let (Some(critic), Some(cg)) = (model.critic.as_mut(), out.critic_grads.as_ref()) {
                critic_opt.step(&mut critic.params, cg)?;
            }
            cim_steps += usize::from(out.breakdown.cim_applied);
            breakdowns.push(out.breakdown);
        }
        let val = validator(&model, epoch)?;
        log::debug!("seed {seed} epoch {epoch}: val {val:.4}");
        epochs.push(EpochRecord {
            epoch,
            step_totals: breakdowns.iter().map(|b| b.grand_total).collect(),
            train: LossBreakdown::mean_of(&breakdowns).expect("at least one step per epoch"),
            cim_steps,
            val_metric: val,
        });
        match &best {
            Some((b, _, _)) if !(val > *b) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
            _ => {
                best = Some((val, epoch, model.clone()));
                since_best = 0;
            }
        }
    }
    let (best_val, best_epoch, best_model) = best.expect("at least one epoch");
    let mut test = evaluate_split(&best_model, dataset, Split::Test, cfg)?;
    test.seed = Some(seed);
    Ok(TrainedRun {
        record: RunRecord {
            seed,
            epochs,
            best_epoch,
            best_val,
            test,
            stopped_early,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        model: best_model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedRecord {
    pub runs: Vec<RunRecord>,
    /// Test metric name → mean and sample std over seeds (plus `headline`).
    pub summary: Vec<(String, SeedStats)>,
}

impl MultiSeedRecord {
    pub fn stats(&self, name: &str) -> Option<&SeedStats> {
        self.summary.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn headline(&self) -> &SeedStats {
        self.stats("headline").expect("headline is always summarized")
    }
}

pub fn aggregate(runs: Vec<RunRecord>) -> MultiSeedRecord {
    let mut summary = Vec::new();
    if let Some(first) = runs.first() {
        for (name, _) in &first.test.metrics {
            let vals = runs.iter().filter_map(|r| r.test.get(name)).collect();
            summary.push((name.clone(), SeedStats::from_values(vals)));
        }
    }
    summary.push(("headline".into(), SeedStats::from_values(runs.iter().map(|r| r.test.headline()).collect())));
    MultiSeedRecord { runs, summary }
}

/// Independent runs for every seed in `cfg.seeds`, executed in order.
pub fn multi_seed(
    factory: &ModelFactory<'_>,
    dataset: &Dataset,
    objective: &ObjectiveConfig,
    cfg: &TrainConfig,
) -> Result<(MultiSeedRecord, Vec<Model>)> {
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for &seed in &cfg.seeds {
        let r = train(factory, dataset, objective, cfg, seed)?;
        runs.push(r.record);
        models.push(r.model);
    }
    Ok((aggregate(runs), models))
}
