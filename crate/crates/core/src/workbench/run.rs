//! The `train`, `evaluate`, `sweep`, `transfer` and `ood` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::data::{Dataset, Split, TaskKind};
use crate::encoder::Model;
use crate::error::{CifmError, Result};
use crate::evalharness::{
    ood_eval, robustness_sweep, subsample_protocol, subset_dataset, transfer_all, LabelMap, SweepCurve, SweepSpec,
    TransferReport,
};
use crate::metrics::{ari, argmax_rows, uniformity, MetricReport, Predictions, SeedStats};
use crate::objective::ObjectiveConfig;
use crate::perturbation::NoiseKind;
use crate::trainer::{aggregate, evaluate_split, gold_of, run_split, train, RunRecord};
use crate::workbench::checkpoint::{self, CheckpointMeta};
use crate::workbench::config::ExperimentConfig;
use crate::workbench::report::{RunDir, CODE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Evaluate,
    Sweep,
    Transfer,
    Ood,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Transfer => "transfer",
            Command::Ood => "ood",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Use these models instead of training from the config.
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub config_hash: String,
    pub summary: serde_json::Value,
    /// Human-readable summary, also written to `summary.txt`.
    pub text: String,
}

/// A model to evaluate, with the seed that produced it.
struct Member {
    seed: u64,
    model: Model,
    stored_test: Option<MetricReport>,
}

#[derive(Serialize)]
struct Quality {
    seed: u64,
    uniformity: f64,
    ari: Option<f64>,
}

fn fmt_stats(s: &SeedStats) -> String {
    format!("{:.4} ± {:.4} (n={})", s.mean, s.std, s.values.len())
}

fn seeds_of(members: &[Member]) -> Vec<u64> {
    members.iter().map(|m| m.seed).collect()
}

pub fn run(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let loaded = cfg.dataset.load(Path::new(""))?;
    let ds = &loaded.dataset;
    ds.validate()?;
    let objective = cfg.objective(ds.task)?;
    if command == Command::Evaluate && opts.checkpoints.is_empty() {
        return Err(CifmError::Usage("evaluate needs at least one --checkpoint".into()));
    }
    // everything the evaluation needs is loaded before any training starts
    let transfer_targets = match (command, &cfg.eval.transfer) {
        (Command::Transfer, None) => return Err(CifmError::Usage("transfer needs an [eval.transfer] section".into())),
        (Command::Transfer, Some(t)) => {
            t.targets.iter().map(|r| r.load(Path::new("")).map(|l| l.dataset)).collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };
    let ood_target = match (command, &cfg.eval.ood) {
        (Command::Ood, None) => return Err(CifmError::Usage("ood needs an [eval.ood] section".into())),
        (Command::Ood, Some(o)) => {
            let t = o.target.load(Path::new(""))?;
            let map = match (&o.label_map, t.label_map) {
                (Some(m), _) => m.clone(),
                (None, Some(m)) => m,
                (None, None) => return Err(CifmError::Config("eval.ood.label_map is required for this target".into())),
            };
            Some((t.dataset, map))
        }
        _ => None,
    };
    let mut dir = RunDir::create(cfg, command.name())?;
    if command == Command::Train {
        if let Some(sub) = &cfg.eval.subsample {
            return subsample_run(cfg, ds, &objective, sub, &mut dir);
        }
    }
    let members = if opts.checkpoints.is_empty() {
        train_members(cfg, ds, &objective, &mut dir)?
    } else {
        load_members(&opts.checkpoints, ds)?
    };
    let seeds = seeds_of(&members);
    let mut text = format!("{} on {} ({}, config {})\n", command.name(), ds.name, CODE_VERSION, dir.config_hash);
    let summary = match command {
        Command::Train => train_summary(cfg, ds, &members, &mut text)?,
        Command::Evaluate => evaluate_summary(cfg, ds, &members, &mut text)?,
        Command::Sweep => sweep_summary(cfg, ds, &members, &dir, &mut text)?,
        Command::Transfer => transfer_summary(cfg, &transfer_targets, &members, &mut text)?,
        Command::Ood => {
            let (target, map) = ood_target.as_ref().expect("loaded above");
            ood_summary(cfg, ds, target, map, &members, &mut text)?
        }
    };
    dir.write_json("summary.json", &seeds, &summary)?;
    dir.write_text("summary.txt", &text)?;
    log::info!("wrote {}", dir.path.display());
    Ok(RunOutcome { dir: dir.path.clone(), config_hash: dir.config_hash.clone(), summary, text })
}

fn log_run(dir: &mut RunDir, record: &RunRecord) -> Result<()> {
    for e in &record.epochs {
        dir.log(record.seed, &json!({ "event": "epoch", "record": e }))?;
    }
    dir.log(
        record.seed,
        &json!({
            "event": "run",
            "best_epoch": record.best_epoch,
            "best_val": record.best_val,
            "stopped_early": record.stopped_early,
            "test": record.test,
        }),
    )
}

fn train_members(cfg: &ExperimentConfig, ds: &Dataset, objective: &ObjectiveConfig, dir: &mut RunDir) -> Result<Vec<Member>> {
    let factory = |seed: u64| Model::new(cfg.encoder.clone(), ds.num_outputs(), seed);
    let snapshot = serde_json::to_value(cfg)?;
    let mut out = Vec::new();
    for &seed in &cfg.train.seeds {
        let run = train(&factory, ds, objective, &cfg.train, seed)?;
        log_run(dir, &run.record)?;
        let meta = CheckpointMeta {
            dataset: ds.name.clone(),
            labels: ds.labels.clone(),
            seed,
            best_epoch: run.record.best_epoch,
            test: Some(run.record.test.clone()),
            config_hash: dir.config_hash.clone(),
            code_version: CODE_VERSION.into(),
            config: snapshot.clone(),
        };
        checkpoint::save(&dir.file(&format!("seed-{seed}.ckpt"))?, &run.model, meta)?;
        out.push(Member { seed, model: run.model, stored_test: Some(run.record.test.clone()) });
        dir.write_json(&format!("record-seed-{seed}.json"), &[seed], &run.record)?;
    }
    Ok(out)
}

fn load_members(paths: &[PathBuf], ds: &Dataset) -> Result<Vec<Member>> {
    paths
        .iter()
        .map(|p| {
            let (model, manifest) = checkpoint::load(p)?;
            if model.num_outputs != ds.num_outputs() || (ds.task == TaskKind::Classification && manifest.meta.labels != ds.labels) {
                return Err(CifmError::Usage(format!(
                    "{} was trained on {} with labels {:?}; the dataset has {:?}",
                    p.display(),
                    manifest.meta.dataset,
                    manifest.meta.labels,
                    ds.labels
                )));
            }
            Ok(Member { seed: manifest.meta.seed, model, stored_test: manifest.meta.test })
        })
        .collect()
}

fn quality(cfg: &ExperimentConfig, ds: &Dataset, m: &Member) -> Result<Quality> {
    let enc = m.model.config.tokenizer(cfg.train.max_length).encode_split(ds.split(Split::Test));
    let out = run_split(&m.model, &enc, ds.task, cfg.train.eval_batch_size, None)?;
    let ari_value = match gold_of(&enc.targets, ds.task)? {
        Predictions::Classes(gold) => Some(ari(&gold, &argmax_rows(&out.outputs))?.value),
        Predictions::Values(_) => None,
    };
    Ok(Quality { seed: m.seed, uniformity: uniformity(&out.pooled, 2.0)?, ari: ari_value })
}

fn train_summary(cfg: &ExperimentConfig, ds: &Dataset, members: &[Member], text: &mut String) -> Result<serde_json::Value> {
    let reports: Vec<MetricReport> = members.iter().filter_map(|m| m.stored_test.clone()).collect();
    let mut stats = Vec::new();
    if let Some(first) = reports.first() {
        for (name, _) in &first.metrics {
            let s = SeedStats::from_values(reports.iter().filter_map(|r| r.get(name)).collect());
            let _ = writeln!(text, "test {name}: {}", fmt_stats(&s));
            stats.push((name.clone(), s));
        }
    }
    let mut qualities = Vec::new();
    if cfg.eval.quality {
        for m in members {
            qualities.push(quality(cfg, ds, m)?);
        }
        let u = SeedStats::from_values(qualities.iter().map(|q| q.uniformity).collect());
        let _ = writeln!(text, "uniformity: {}", fmt_stats(&u));
        if qualities.iter().all(|q| q.ari.is_some()) && !qualities.is_empty() {
            let a = SeedStats::from_values(qualities.iter().filter_map(|q| q.ari).collect());
            let _ = writeln!(text, "ari: {}", fmt_stats(&a));
        }
    }
    Ok(json!({ "test": stats, "quality": qualities }))
}

fn evaluate_summary(cfg: &ExperimentConfig, ds: &Dataset, members: &[Member], text: &mut String) -> Result<serde_json::Value> {
    let mut rows = Vec::new();
    for m in members {
        let report = evaluate_split(&m.model, ds, Split::Test, &cfg.train)?;
        let reproduces = m.stored_test.as_ref().map(|s| s.metrics == report.metrics);
        let _ = writeln!(
            text,
            "seed {}: headline {:.6}{}",
            m.seed,
            report.headline(),
            match reproduces {
                Some(true) => ", matches the stored test metric",
                Some(false) => ", DIFFERS from the stored test metric",
                None => "",
            }
        );
        rows.push(json!({ "seed": m.seed, "test": report, "reproduces_stored": reproduces }));
    }
    Ok(json!({ "evaluations": rows }))
}

fn sweep_summary(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    members: &[Member],
    dir: &RunDir,
    text: &mut String,
) -> Result<serde_json::Value> {
    let specs = cfg
        .eval
        .robustness
        .clone()
        .unwrap_or_else(|| vec![SweepSpec::new(NoiseKind::Adversarial), SweepSpec::new(NoiseKind::Random)]);
    let mut csv = String::from("model_seed,kind,strength,seed,headline");
    for m in &ds.metrics {
        let _ = write!(csv, ",{m}");
    }
    csv.push('\n');
    let mut curves: Vec<serde_json::Value> = Vec::new();
    for spec in &specs {
        let mut per_model: Vec<SweepCurve> = Vec::new();
        for m in members {
            let curve = robustness_sweep(&m.model, ds, spec, &cfg.train)?;
            for p in &curve.points {
                let kind = serde_json::to_value(curve.kind)?;
                let _ = write!(csv, "{},{},{},{},{}", m.seed, kind.as_str().unwrap_or(""), p.strength, p.seed, p.headline);
                for (_, v) in &p.metrics {
                    let _ = write!(csv, ",{v}");
                }
                csv.push('\n');
            }
            curves.push(json!({ "model_seed": m.seed, "curve": curve }));
            per_model.push(curve);
        }
        let _ = writeln!(text, "{:?} noise, headline by strength (mean over models and noise seeds):", spec.kind);
        for (i, s) in spec.strengths.iter().enumerate() {
            let vals: Vec<f64> = per_model.iter().map(|c| c.mean[i].1).collect();
            let _ = writeln!(text, "  {s}: {}", fmt_stats(&SeedStats::from_values(vals)));
        }
    }
    dir.write_text("curves.csv", &csv)?;
    Ok(json!({ "curves": curves }))
}

fn transfer_summary(
    cfg: &ExperimentConfig,
    targets: &[Dataset],
    members: &[Member],
    text: &mut String,
) -> Result<serde_json::Value> {
    let section = cfg.eval.transfer.as_ref().expect("checked before training");
    let mut out = Vec::new();
    for &probe in &section.probes {
        let mut reports: Vec<(u64, TransferReport)> = Vec::new();
        for m in members {
            let spec = section.spec(probe, cfg.train.max_length, m.seed);
            reports.push((m.seed, transfer_all(&m.model, targets, &spec)?));
        }
        let avg = SeedStats::from_values(reports.iter().map(|(_, r)| r.average).collect());
        let _ = writeln!(text, "{probe:?} probe, average over targets: {}", fmt_stats(&avg));
        out.push(json!({ "probe": probe, "average": avg, "runs": reports.iter().map(|(s, r)| json!({"model_seed": s, "report": r})).collect::<Vec<_>>() }));
    }
    Ok(json!({ "probes": out }))
}

fn ood_summary(
    cfg: &ExperimentConfig,
    source: &Dataset,
    target: &Dataset,
    map: &LabelMap,
    members: &[Member],
    text: &mut String,
) -> Result<serde_json::Value> {
    let mut rows = Vec::new();
    let mut in_domain = Vec::new();
    let mut shifted = Vec::new();
    for m in members {
        let id = evaluate_split(&m.model, source, Split::Test, &cfg.train)?;
        let ood = ood_eval(&m.model, source, target, map, &cfg.train)?;
        in_domain.push(id.headline());
        shifted.push(ood.headline());
        rows.push(json!({ "seed": m.seed, "in_domain": id, "ood": ood }));
    }
    let _ = writeln!(text, "in-domain ({}): {}", source.name, fmt_stats(&SeedStats::from_values(in_domain)));
    let _ = writeln!(text, "ood ({}): {}", target.name, fmt_stats(&SeedStats::from_values(shifted)));
    Ok(json!({ "target": target.name, "label_map": map, "runs": rows }))
}

fn subsample_run(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    objective: &ObjectiveConfig,
    sub: &crate::workbench::config::SubsampleSection,
    dir: &mut RunDir,
) -> Result<RunOutcome> {
    let subsets = subsample_protocol(&ds.train, &sub.ratios, &sub.seeds, sub.mode)?;
    let factory = |seed: u64| Model::new(cfg.encoder.clone(), ds.num_outputs(), seed);
    let mut text = format!("train on subsampled {} ({}, config {})\n", ds.name, CODE_VERSION, dir.config_hash);
    let mut rows = Vec::new();
    for &ratio in &sub.ratios {
        let mut runs = Vec::new();
        for s in subsets.iter().filter(|s| s.ratio == ratio) {
            let data = subset_dataset(ds, s);
            for &seed in &cfg.train.seeds {
                let r = train(&factory, &data, objective, &cfg.train, seed)?;
                dir.log(seed, &json!({ "event": "subset", "ratio": ratio, "subset_seed": s.seed, "size": s.indices.len() }))?;
                log_run(dir, &r.record)?;
                runs.push(r.record);
            }
        }
        let agg = aggregate(runs);
        let _ = writeln!(text, "ratio {ratio}: test headline {}", fmt_stats(agg.headline()));
        rows.push(json!({ "ratio": ratio, "record": agg }));
    }
    let summary = json!({ "subsample": rows, "subsets": subsets });
    dir.write_json("summary.json", &cfg.train.seeds, &summary)?;
    dir.write_text("summary.txt", &text)?;
    Ok(RunOutcome { dir: dir.path.clone(), config_hash: dir.config_hash.clone(), summary, text })
}
