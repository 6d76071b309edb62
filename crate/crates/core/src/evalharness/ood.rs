use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, Target};
use crate::encoder::Model;
use crate::error::{CifmError, Result};
use crate::metrics::{evaluate, MetricReport, MetricSpec, Predictions};
use crate::trainer::{run_split, TrainConfig};

/// Source label → the target labels it covers (coarse → fine).
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct LabelMap {
    map: BTreeMap<String, Vec<String>>,
}

impl LabelMap {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Self {
        LabelMap { map }
    }

    pub fn identity(labels: &[String]) -> Self {
        LabelMap { map: labels.iter().map(|l| (l.clone(), vec![l.clone()])).collect() }
    }

    pub fn targets_of(&self, source: &str) -> &[String] {
        self.map.get(source).map_or(&[], Vec::as_slice)
    }

    pub fn source_of(&self, target: &str) -> Option<&str> {
        self.map.iter().find(|(_, t)| t.iter().any(|x| x == target)).map(|(s, _)| s.as_str())
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Every target label appears under at most one source label.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (s, targets) in &self.map {
            for t in targets {
                if let Some(prev) = seen.insert(t.as_str(), s.as_str()) {
                    return Err(CifmError::Config(format!("target label '{t}' mapped from both '{prev}' and '{s}'")));
                }
            }
        }
        Ok(())
    }
}

/// Evaluate a source-trained classifier on a target test split whose labels
/// are mapped back into the source taxonomy. Target samples whose label has
/// no source counterpart are excluded.
pub fn ood_eval(
    model: &Model,
    source: &Dataset,
    target: &Dataset,
    map: &LabelMap,
    cfg: &TrainConfig,
) -> Result<MetricReport> {
    map.validate()?;
    let mut source_idx = BTreeMap::new();
    for s in map.sources() {
        let i = source.labels.iter().position(|l| l == s).ok_or_else(|| {
            CifmError::Config(format!("label map source '{s}' is not a label of {}", source.name))
        })?;
        source_idx.insert(s, i);
    }
    let rows = target.split(Split::Test);
    let mut keep = Vec::new();
    let mut gold = Vec::new();
    for (i, ex) in rows.iter().enumerate() {
        let Target::Class(c) = ex.target else {
            return Err(CifmError::Usage("OOD evaluation needs a classification target".into()));
        };
        let name = target.labels.get(c).ok_or_else(|| CifmError::Data(format!("target label {c} out of range")))?;
        if let Some(s) = map.source_of(name) {
            keep.push(i);
            gold.push(source_idx[s]);
        }
    }
    if keep.is_empty() {
        return Err(CifmError::Usage("label map covers no target test sample".into()));
    }
    let kept: Vec<_> = keep.iter().map(|&i| rows[i].clone()).collect();
    let enc = model.config.tokenizer(cfg.max_length).encode_split(&kept);
    let out = run_split(model, &enc, source.task, cfg.eval_batch_size, None)?;
    let mapped: Vec<String> = source.labels.iter().filter(|l| source_idx.contains_key(l.as_str())).cloned().collect();
    let specs: Vec<MetricSpec> = source
        .metrics
        .iter()
        .map(|m| match m {
            MetricSpec::MacroF1 if mapped.len() < source.labels.len() => MetricSpec::MacroF1Subset(mapped.clone()),
            other => other.clone(),
        })
        .collect();
    evaluate(&specs, &source.labels, &Predictions::Classes(gold), &out.predictions)
}
