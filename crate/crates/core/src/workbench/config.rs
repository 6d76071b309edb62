//! Experiment configuration: one TOML document with dotted sections.
//!
//! Resolution order, later wins: named presets, the file, `--key.path=value`
//! overrides. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{Dataset, TaskKind};
use crate::encoder::{Backbone, EncoderConfig};
use crate::error::{CifmError, Result};
use crate::estimators::MineConfig;
use crate::evalharness::{LabelMap, ProbeKind, SubsampleMode, SweepSpec, TransferSpec};
use crate::objective::{MiEstimator, ObjectiveConfig};
use crate::oracle::{make_synthetic_corpus_sized, CorpusSize, SyntheticKind};
use crate::perturbation::PerturbationSpec;
use crate::trainer::TrainConfig;
use crate::workbench::{ingest, presets};

/// Where the data comes from: a generated corpus or a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticKind>,
    /// Path to a manifest TOML, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Generator seed for synthetic corpora.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<CorpusSize>,
    /// Dataset index inside a multi-dataset corpus (taxonomy-pair: 0 coarse, 1 fine).
    #[serde(default)]
    pub part: usize,
}

/// A resolved dataset plus the corpus-provided label map, if any.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub label_map: Option<LabelMap>,
}

impl DatasetRef {
    pub fn synthetic(kind: SyntheticKind) -> Self {
        DatasetRef { synthetic: Some(kind), manifest: None, seed: 0, size: None, part: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.manifest) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(CifmError::Config("dataset needs exactly one of `synthetic` or `manifest`".into())),
        }
    }

    pub fn load(&self, base: &Path) -> Result<LoadedDataset> {
        self.validate()?;
        if let Some(kind) = self.synthetic {
            let size = self.size.unwrap_or_else(|| CorpusSize::default_for(kind));
            let corpus = make_synthetic_corpus_sized(kind, self.seed, size);
            let n = corpus.datasets.len();
            let dataset = corpus.datasets.into_iter().nth(self.part).ok_or_else(|| {
                CifmError::Config(format!("dataset.part {} out of range; corpus has {n} datasets", self.part))
            })?;
            return Ok(LoadedDataset { dataset, label_map: corpus.label_map });
        }
        let path = base.join(self.manifest.as_ref().expect("validated"));
        Ok(LoadedDataset { dataset: ingest::load_manifest(&path)?.0, label_map: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default = "d_point_one")]
    pub beta: f64,
    #[serde(default = "d_point_one")]
    pub tau: f64,
    #[serde(default)]
    pub mi_estimator: MiEstimator,
    /// Must agree with the dataset when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_kind: Option<TaskKind>,
    #[serde(default = "d_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negatives: Option<usize>,
}

fn d_point_one() -> f64 {
    0.1
}
fn d_true() -> bool {
    true
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            beta: 0.1,
            tau: 0.1,
            mi_estimator: MiEstimator::InfoNce,
            task_kind: None,
            normalize: true,
            negatives: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub targets: Vec<DatasetRef>,
    #[serde(default = "d_probes")]
    pub probes: Vec<ProbeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    /// Groups held frozen; empty means everything but `head`.
    #[serde(default)]
    pub frozen_groups: Vec<String>,
}

fn d_probes() -> Vec<ProbeKind> {
    vec![ProbeKind::Linear, ProbeKind::Cnn]
}

impl TransferSection {
    pub fn spec(&self, probe: ProbeKind, max_length: usize, seed: u64) -> TransferSpec {
        let base = TransferSpec::new(probe);
        TransferSpec {
            frozen_groups: self.frozen_groups.clone(),
            epochs: self.epochs.unwrap_or(base.epochs),
            patience: self.patience.unwrap_or(base.patience),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            filters: self.filters.unwrap_or(base.filters),
            widths: self.widths.clone().unwrap_or(base.widths),
            max_length,
            seed,
            probe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OodSection {
    pub target: DatasetRef,
    /// Source label → target labels. Defaults to the corpus map when the
    /// target is a generated taxonomy pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<LabelMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSection {
    pub ratios: Vec<f64>,
    #[serde(default = "d_subsample_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mode: SubsampleMode,
}

fn d_subsample_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Uniformity and ARI of test representations after training.
    #[serde(default = "d_true")]
    pub quality: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<Vec<SweepSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodSection>,
    /// Train on reduced training splits instead of the full one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleSection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { quality: true, robustness: None, transfer: None, ood: None, subsample: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `+`-joined preset names applied beneath the file, e.g. `synthetic-noisy+cifm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub dataset: DatasetRef,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub mine: MineConfig,
    /// Adversarial weight perturbation; absent means plain IFM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cim: Option<PerturbationSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_encoder")]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
}

fn d_encoder() -> EncoderConfig {
    EncoderConfig::new(Backbone::Transformer)
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn objective(&self, task: TaskKind) -> Result<ObjectiveConfig> {
        if let Some(t) = self.objective.task_kind {
            if t != task {
                return Err(CifmError::Config(format!("objective.task_kind is {t:?} but the dataset is {task:?}")));
            }
        }
        let o = &self.objective;
        let cfg = ObjectiveConfig {
            beta: o.beta,
            tau: o.tau,
            mi_estimator: o.mi_estimator,
            task_kind: task,
            normalize: o.normalize,
            negatives: o.negatives,
            mine: self.mine.clone(),
            cim: self.cim.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.objective(self.objective.task_kind.unwrap_or(TaskKind::Classification))?;
        self.train.validate()?;
        self.encoder.validate()?;
        if !(self.mine.ema_rate > 0.0 && self.mine.ema_rate < 1.0) || self.mine.hidden == 0 {
            return Err(CifmError::Config("mine.ema_rate must be in (0,1) and mine.hidden positive".into()));
        }
        if let Some(sweeps) = &self.eval.robustness {
            for s in sweeps {
                s.validate()?;
            }
        }
        if let Some(t) = &self.eval.transfer {
            if t.targets.is_empty() || t.probes.is_empty() {
                return Err(CifmError::Config("eval.transfer needs targets and probes".into()));
            }
            for d in &t.targets {
                d.validate()?;
            }
        }
        if let Some(o) = &self.eval.ood {
            o.target.validate()?;
            if let Some(m) = &o.label_map {
                m.validate()?;
            }
        }
        if let Some(s) = &self.eval.subsample {
            if s.ratios.is_empty() || s.seeds.is_empty() || s.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(CifmError::Config("eval.subsample needs ratios in (0,1] and seeds".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// JSON schema of the config document.
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

/// Parse `--a.b=v` / `a.b=v` pairs. Values are TOML literals; anything that
/// does not parse as one is taken as a bare string.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let a = a.trim_start_matches("--");
        let (key, raw) = match a.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CifmError::Usage(format!("override '{a}' has no value")))?;
                (a.to_string(), v.clone())
            }
        };
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(CifmError::Usage(format!("bad override key '{key}'")));
        }
        out.push((key, parse_value(&raw)));
    }
    Ok(out)
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CifmError::Usage(format!("override '{key}' descends into non-table '{p}'")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Deep merge, `over` wins; tables merge recursively, everything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Build the resolved config from presets, an optional file and overrides.
pub fn resolve(file: Option<&Path>, extra_presets: &[String], overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let file_table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CifmError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| CifmError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let mut names: Vec<String> = Vec::new();
    if let Some(v) = file_table.get("preset") {
        let s = v.as_str().ok_or_else(|| CifmError::Config("preset must be a string".into()))?;
        names.extend(s.split('+').map(|n| n.trim().to_string()));
    }
    for p in extra_presets {
        names.extend(p.split('+').map(|n| n.trim().to_string()));
    }
    names.retain(|n| !n.is_empty());
    let mut table = Table::new();
    for n in &names {
        merge(&mut table, presets::preset(n)?);
    }
    merge(&mut table, file_table);
    if !names.is_empty() {
        table.insert("preset".into(), Value::String(names.join("+")));
    }
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone())?;
    }
    let mut cfg: ExperimentConfig =
        Value::Table(table).try_into().map_err(|e: toml::de::Error| CifmError::Config(e.message().to_string()))?;
    if let (Some(p), Some(m)) = (file.and_then(Path::parent), cfg.dataset.manifest.as_mut()) {
        if m.is_relative() {
            *m = p.join(&*m);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_values() {
        let o = parse_overrides(&["--train.lr=0.01".into(), "--cim.target_groups".into(), "[\"head\"]".into()]).unwrap();
        assert_eq!(o[0], ("train.lr".into(), Value::Float(0.01)));
        assert!(matches!(&o[1].1, Value::Array(a) if a.len() == 1));
        assert_eq!(parse_value("noisy"), Value::String("noisy".into()));
        assert!(parse_overrides(&["--a..b=1".into()]).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let ov = parse_overrides(&["--dataset.synthetic=noisy".into(), "--train.lr_typo=1".into()]).unwrap();
        assert!(matches!(resolve(None, &[], &ov), Err(CifmError::Config(_))));
        let ov = parse_overrides(&["--dataset.synthetic=noisy".into(), "--bogus=1".into()]).unwrap();
        assert!(resolve(None, &[], &ov).is_err());
    }

    #[test]
    fn layering() {
        let ov = parse_overrides(&["--train.epochs=3".into()]).unwrap();
        let cfg = resolve(None, &["synthetic-noisy+cifm".into()], &ov).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.dataset.synthetic, Some(SyntheticKind::Noisy));
        assert!(cfg.cim.is_some());
        assert_eq!(cfg.preset.as_deref(), Some("synthetic-noisy+cifm"));
        let again: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn dataset_ref_needs_one_source() {
        let mut d = DatasetRef::synthetic(SyntheticKind::Xor);
        d.validate().unwrap();
        d.manifest = Some("m.toml".into());
        assert!(d.validate().is_err());
    }

    #[test]
    fn schema_lists_sections() {
        let s = schema().to_string();
        for key in ["objective", "cim", "train", "encoder", "eval", "epsilon", "target_groups"] {
            assert!(s.contains(key), "{key}");
        }
    }
}
