use cifm_autograd::{Graph, Matrix, Var};
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{BatchTargets, Dataset, EncodedSplit, Example, Split, TaskKind};
use crate::encoder::{ForwardOptions, Model};
use crate::error::{CifmError, Result};
use crate::estimators::label_term_graph;
use crate::metrics::{evaluate, global_average_of, MetricReport};
use crate::optim::{Adamax, AdamaxConfig};
use crate::params::{glorot, ParamStore};
use crate::trainer::{gold_of, predictions_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Linear,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub probe: ProbeKind,
    /// Groups treated as the extractor; empty means every group but `head`.
    #[serde(default)]
    pub frozen_groups: Vec<String>,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_filters")]
    pub filters: usize,
    #[serde(default = "d_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "d_max_length")]
    pub max_length: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_epochs() -> usize {
    40
}
fn d_patience() -> usize {
    8
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    5e-3
}
fn d_filters() -> usize {
    64
}
fn d_widths() -> Vec<usize> {
    vec![3, 4, 5]
}
fn d_max_length() -> usize {
    128
}

impl TransferSpec {
    pub fn new(probe: ProbeKind) -> Self {
        TransferSpec {
            probe,
            frozen_groups: Vec::new(),
            epochs: d_epochs(),
            patience: d_patience(),
            batch_size: d_batch(),
            lr: d_lr(),
            filters: d_filters(),
            widths: d_widths(),
            max_length: d_max_length(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub target: String,
    pub probe: ProbeKind,
    pub report: MetricReport,
    pub best_epoch: usize,
    pub extractor_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub probes: Vec<ProbeReport>,
    pub average: f64,
}

/// Frozen features of one split.
struct Features {
    /// Pooled `Z`, `N×d`.
    pooled: Matrix,
    /// One im2col matrix per window width, `(N·L)×(w·d)`.
    windows: Vec<Matrix>,
    seq_len: usize,
    gold: BatchTargets,
}

fn extractor_checksum(model: &Model, spec: &TransferSpec) -> Result<String> {
    if spec.frozen_groups.is_empty() {
        Ok(model.params.checksum_excluding(&["head"]))
    } else {
        Ok(model.params.checksum_of(&model.params.resolve_groups(&spec.frozen_groups)?))
    }
}

fn features(model: &Model, rows: &[Example], task: TaskKind, spec: &TransferSpec, need_windows: bool) -> Result<Features> {
    let enc: EncodedSplit = model.config.tokenizer(spec.max_length).encode_split(rows);
    let n = enc.len();
    let l = enc.max_len();
    let d = model.config.dim;
    let mut pooled = Array2::zeros((n, model.z_dim()));
    let mut tokens = Array2::zeros((n * l, d));
    let mut lens = vec![0; n];
    for chunk in enc.chunks(128) {
        let batch = enc.batch(&chunk, l);
        let mut g = Graph::new();
        let fv = model.forward(&mut g, &batch, ForwardOptions::eval())?;
        let tok = g.value(fv.tokens);
        for (bi, &row) in chunk.iter().enumerate() {
            pooled.row_mut(row).assign(&g.value(fv.pooled).row(bi));
            lens[row] = enc.sequences[row].len();
            tokens.slice_mut(s![row * l..row * l + lens[row], ..]).assign(&tok.slice(s![bi * l..bi * l + lens[row], ..]));
        }
    }
    let mut windows = Vec::new();
    if need_windows {
        for &w in &spec.widths {
            let mut m = Array2::zeros((n * l, w * d));
            for i in 0..n {
                let valid = lens[i].saturating_sub(w) + 1;
                for p in 0..l {
                    // windows past the sequence end repeat the first window so max-pooling ignores them
                    let start = if p < valid { p } else { 0 };
                    for k in 0..w {
                        let t = start + k;
                        if t < lens[i] {
                            m.slice_mut(s![i * l + p, k * d..(k + 1) * d]).assign(&tokens.row(i * l + t));
                        }
                    }
                }
            }
            windows.push(m);
        }
    }
    let gold = match gold_of(&enc.targets, task)? {
        crate::metrics::Predictions::Classes(c) => BatchTargets::Classes(c),
        crate::metrics::Predictions::Values(v) => BatchTargets::Values(v),
    };
    Ok(Features { pooled, windows, seq_len: l, gold })
}

fn select_targets(t: &BatchTargets, rows: &[usize]) -> BatchTargets {
    match t {
        BatchTargets::Classes(c) => BatchTargets::Classes(rows.iter().map(|&r| c[r]).collect()),
        BatchTargets::Values(v) => BatchTargets::Values(v.select(Axis(0), rows)),
    }
}

fn init_probe(spec: &TransferSpec, d_pooled: usize, d_token: usize, outputs: usize) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9b0b);
    let mut p = ParamStore::new();
    match spec.probe {
        ProbeKind::Linear => {
            p.insert("probe.out.w", glorot(&mut rng, d_pooled, outputs));
            p.insert("probe.out.b", Array2::zeros((1, outputs)));
        }
        ProbeKind::Cnn => {
            for &w in &spec.widths {
                p.insert(format!("probe.conv{w}.w"), glorot(&mut rng, w * d_token, spec.filters));
                p.insert(format!("probe.conv{w}.b"), Array2::zeros((1, spec.filters)));
            }
            p.insert("probe.out.w", glorot(&mut rng, spec.filters * spec.widths.len(), outputs));
            p.insert("probe.out.b", Array2::zeros((1, outputs)));
        }
    }
    p
}

fn probe_forward<'a>(g: &mut Graph<'a>, p: &'a ParamStore, spec: &TransferSpec, f: &Features, rows: &[usize]) -> Var {
    let feats = match spec.probe {
        ProbeKind::Linear => g.constant(f.pooled.select(Axis(0), rows)),
        ProbeKind::Cnn => {
            let l = f.seq_len;
            let token_rows: Vec<usize> = rows.iter().flat_map(|&r| r * l..(r + 1) * l).collect();
            let mut pooled = Vec::new();
            for (wi, &w) in spec.widths.iter().enumerate() {
                let x = g.constant(f.windows[wi].select(Axis(0), &token_rows));
                let wv = p.bind(g, p.index_of(&format!("probe.conv{w}.w")).expect("conv weight"));
                let bv = p.bind(g, p.index_of(&format!("probe.conv{w}.b")).expect("conv bias"));
                let h = g.matmul(x, wv);
                let h = g.add_row(h, bv);
                let h = g.relu(h);
                pooled.push(g.segment_max(h, l));
            }
            g.concat_cols(&pooled)
        }
    };
    let w = p.bind(g, p.index_of("probe.out.w").expect("probe weight"));
    let b = p.bind(g, p.index_of("probe.out.b").expect("probe bias"));
    let o = g.matmul(feats, w);
    g.add_row(o, b)
}

fn probe_outputs(p: &ParamStore, spec: &TransferSpec, f: &Features) -> Matrix {
    let n = f.pooled.nrows();
    let mut parts = Vec::new();
    for start in (0..n).step_by(256) {
        let rows: Vec<usize> = (start..(start + 256).min(n)).collect();
        let mut g = Graph::new();
        let o = probe_forward(&mut g, p, spec, f, &rows);
        parts.push(g.value(o).clone());
    }
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("consistent probe widths")
}

/// Train a fresh probe on frozen features of `target` and report its test metrics.
pub fn transfer_probe(model: &Model, target: &Dataset, spec: &TransferSpec) -> Result<ProbeReport> {
    target.validate()?;
    if spec.epochs == 0 || spec.batch_size == 0 || spec.widths.is_empty() || spec.filters == 0 {
        return Err(CifmError::Config("probe needs positive epochs, batch size, filters and widths".into()));
    }
    let before = extractor_checksum(model, spec)?;
    let cnn = spec.probe == ProbeKind::Cnn;
    let train = features(model, target.split(Split::Train), target.task, spec, cnn)?;
    let val = features(model, target.split(Split::Val), target.task, spec, cnn)?;
    let test = features(model, target.split(Split::Test), target.task, spec, cnn)?;
    let mut probe = init_probe(spec, model.z_dim(), model.config.dim, target.num_outputs());
    let mut opt = Adamax::new(AdamaxConfig { lr: spec.lr, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let score = |p: &ParamStore, f: &Features| -> Result<MetricReport> {
        let out = probe_outputs(p, spec, f);
        let gold = match &f.gold {
            BatchTargets::Classes(c) => crate::metrics::Predictions::Classes(c.clone()),
            BatchTargets::Values(v) => crate::metrics::Predictions::Values(v.clone()),
        };
        evaluate(&target.metrics, &target.labels, &gold, &predictions_from(&out, target.task))
    };
    let mut best = (f64::NEG_INFINITY, 0, probe.clone());
    let mut since = 0;
    let n = train.pooled.nrows();
    for epoch in 1..=spec.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for rows in order.chunks(spec.batch_size) {
            let grads = {
                let mut g = Graph::new();
                let o = probe_forward(&mut g, &probe, spec, &train, rows);
                let loss = label_term_graph(&mut g, o, &select_targets(&train.gold, rows), target.task)?;
                let gr = g.backward(loss);
                probe.grads_from(&g, &gr)
            };
            opt.step(&mut probe, &grads)?;
        }
        let v = score(&probe, &val)?.headline();
        if v > best.0 {
            best = (v, epoch, probe.clone());
            since = 0;
        } else {
            since += 1;
            if since >= spec.patience {
                break;
            }
        }
    }
    let report = score(&best.2, &test)?;
    let after = extractor_checksum(model, spec)?;
    if before != after {
        return Err(CifmError::Consistency("extractor weights changed during probe training".into()));
    }
    Ok(ProbeReport { target: target.name.clone(), probe: spec.probe, report, best_epoch: best.1, extractor_checksum: after })
}

/// Probe every target dataset and average their headline scores.
pub fn transfer_all(model: &Model, targets: &[Dataset], spec: &TransferSpec) -> Result<TransferReport> {
    let probes = targets.iter().map(|t| transfer_probe(model, t, spec)).collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricReport> = probes.iter().map(|p| p.report.clone()).collect();
    let average = global_average_of(&reports)?;
    Ok(TransferReport { probes, average })
}
