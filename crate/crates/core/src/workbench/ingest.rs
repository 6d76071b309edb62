//! Dataset files: delimited text or line-JSON with `text` plus `label` or
//! `score` columns, tied together by a TOML manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Split, Target, TaskKind};
use crate::error::{CifmError, Result};
use crate::metrics::MetricSpec;
use crate::workbench::presets;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = CifmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            "jsonl" | "json" => Ok(Format::Jsonl),
            _ => Err(CifmError::Usage(format!("unknown dataset format '{s}' (tsv, csv, jsonl)"))),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| CifmError::Usage(format!("cannot infer the format of {}", path.display())))?
            .parse()
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Tsv => "tsv",
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RawTarget {
    Label(String),
    Scores(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub text: String,
    pub target: RawTarget,
}

/// Parsed rows of one file, labels not yet interned.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSplit {
    pub records: Vec<RawRecord>,
    /// Score dimension names; empty for labelled data.
    pub score_names: Vec<String>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> CifmError {
    CifmError::Parse { path: path.display().to_string(), line, message: message.into() }
}

enum Columns {
    Label(usize),
    Scores(Vec<usize>),
}

/// Which header names hold the target: `label`, a single `score`, or `score_<dim>` columns.
fn target_columns(path: &Path, headers: &[String]) -> Result<(usize, Columns, Vec<String>)> {
    let mut seen = BTreeSet::new();
    for h in headers {
        if !seen.insert(h.as_str()) {
            return Err(parse_err(path, 1, format!("duplicate header '{h}'")));
        }
    }
    let text = headers
        .iter()
        .position(|h| h == "text")
        .ok_or_else(|| parse_err(path, 1, "missing column 'text'"))?;
    let label = headers.iter().position(|h| h == "label");
    let mut scores = Vec::new();
    let mut names = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == "score" {
            scores.push(i);
            names.push("score".to_string());
        } else if let Some(dim) = h.strip_prefix("score_") {
            scores.push(i);
            names.push(dim.to_string());
        }
    }
    match (label, scores.is_empty()) {
        (Some(l), true) => Ok((text, Columns::Label(l), Vec::new())),
        (None, false) => {
            if names.len() > 1 && names.iter().any(|n| n == "score") {
                return Err(parse_err(path, 1, "mix of 'score' and 'score_*' columns"));
            }
            Ok((text, Columns::Scores(scores), names))
        }
        (Some(_), false) => Err(parse_err(path, 1, "both 'label' and score columns present")),
        (None, true) => Err(parse_err(path, 1, "missing column 'label' (or 'score')")),
    }
}

fn parse_score(path: &Path, line: usize, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| parse_err(path, line, format!("score '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("score '{raw}' is not finite")));
    }
    Ok(v)
}

fn ingest_delimited(path: &Path, delimiter: u8) -> Result<RawSplit> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(delimiter != b'\t')
        .from_path(path)
        .map_err(|e| CifmError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let (text_col, cols, score_names) = target_columns(path, &headers)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let text = row[text_col].to_string();
        let target = match &cols {
            Columns::Label(l) => {
                let v = row[*l].trim();
                if v.is_empty() {
                    return Err(parse_err(path, line, "empty label"));
                }
                RawTarget::Label(v.to_string())
            }
            Columns::Scores(idx) => {
                RawTarget::Scores(idx.iter().map(|&i| parse_score(path, line, &row[i])).collect::<Result<_>>()?)
            }
        };
        records.push(RawRecord { text, target });
    }
    Ok(RawSplit { records, score_names })
}

fn ingest_jsonl(path: &Path) -> Result<RawSplit> {
    let text = fs::read_to_string(path).map_err(|e| CifmError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut score_names: Option<Vec<String>> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| parse_err(path, n, e.to_string()))?;
        let t = obj.get("text").and_then(|v| v.as_str()).ok_or_else(|| parse_err(path, n, "missing string key 'text'"))?;
        let num = |v: &serde_json::Value| -> Result<f64> {
            v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| parse_err(path, n, format!("score {v} is not a finite number")))
        };
        let keyed: Vec<(&String, &serde_json::Value)> = obj.iter().filter(|(k, _)| k.starts_with("score_")).collect();
        let (target, names) = match (obj.get("label"), obj.get("score"), keyed.is_empty()) {
            (Some(l), None, true) => {
                let l = match l {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(x) => x.to_string(),
                    other => return Err(parse_err(path, n, format!("label {other} is not a string or number"))),
                };
                (RawTarget::Label(l), Vec::new())
            }
            (None, Some(serde_json::Value::Array(a)), true) => {
                let vals = a.iter().map(num).collect::<Result<Vec<_>>>()?;
                let names = (0..vals.len()).map(|d| d.to_string()).collect();
                (RawTarget::Scores(vals), names)
            }
            (None, Some(s), true) => (RawTarget::Scores(vec![num(s)?]), vec!["score".to_string()]),
            (None, None, false) => {
                let names = keyed.iter().map(|(k, _)| k["score_".len()..].to_string()).collect();
                (RawTarget::Scores(keyed.iter().map(|(_, v)| num(v)).collect::<Result<_>>()?), names)
            }
            (None, None, true) => return Err(parse_err(path, n, "missing key 'label' (or 'score')")),
            _ => return Err(parse_err(path, n, "both label and score keys present")),
        };
        match &score_names {
            None => score_names = Some(names),
            Some(prev) if *prev != names => {
                return Err(parse_err(path, n, "target keys differ from earlier lines"));
            }
            _ => {}
        }
        records.push(RawRecord { text: t.to_string(), target });
    }
    Ok(RawSplit { records, score_names: score_names.unwrap_or_default() })
}

/// Parse one file. Empty files are an error.
pub fn ingest(path: &Path, format: Format) -> Result<RawSplit> {
    let split = match format {
        Format::Tsv => ingest_delimited(path, b'\t')?,
        Format::Csv => ingest_delimited(path, b',')?,
        Format::Jsonl => ingest_jsonl(path)?,
    };
    if split.records.is_empty() {
        return Err(CifmError::Data(format!("{}: empty split", path.display())));
    }
    Ok(split)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub task_kind: TaskKind,
    /// Declared label set; the union of observed labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Regression target dimensions; read from the columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dims: Option<Vec<String>>,
    /// Paths relative to the manifest.
    pub splits: SplitFiles,
    /// Inferred from the file extensions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Defaults to the benchmark's metrics when `name` is a known benchmark,
    /// else macro-F1 or Pearson + Spearman.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<MetricSpec>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestReport {
    pub name: String,
    pub rows: BTreeMap<String, usize>,
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    fn metrics_or_default(&self) -> Result<Vec<MetricSpec>> {
        if let Some(m) = &self.metrics {
            return Ok(m.clone());
        }
        if let Some(b) = presets::benchmark(&self.name) {
            return b.metrics.iter().map(|m| m.parse()).collect();
        }
        Ok(match self.task_kind {
            TaskKind::Classification => vec![MetricSpec::MacroF1],
            TaskKind::Regression => vec![MetricSpec::Pearson(0), MetricSpec::Spearman(0)],
        })
    }
}

/// Intern labels, check targets against the task and assemble a dataset.
pub fn build_dataset(manifest: &DatasetManifest, splits: [RawSplit; 3]) -> Result<(Dataset, IngestReport)> {
    let names = ["train", "val", "test"];
    let mut warnings = Vec::new();
    let metrics = manifest.metrics_or_default()?;
    for m in &metrics {
        if m.is_classification() != (manifest.task_kind == TaskKind::Classification) {
            return Err(CifmError::Config(format!("metric {m} does not fit a {:?} task", manifest.task_kind)));
        }
    }
    let mut labels: Vec<String> = Vec::new();
    let mut target_names: Vec<String> = Vec::new();
    match manifest.task_kind {
        TaskKind::Classification => {
            let mut observed = BTreeSet::new();
            for (s, split) in splits.iter().enumerate() {
                for r in &split.records {
                    match &r.target {
                        RawTarget::Label(l) => {
                            observed.insert(l.clone());
                        }
                        RawTarget::Scores(_) => {
                            return Err(CifmError::Data(format!("{}: {} has scores, task is classification", manifest.name, names[s])))
                        }
                    }
                }
            }
            let set: BTreeSet<String> = match &manifest.labels {
                Some(declared) => {
                    let declared: BTreeSet<String> = declared.iter().cloned().collect();
                    if let Some(extra) = observed.difference(&declared).next() {
                        return Err(CifmError::Data(format!("{}: label '{extra}' is not declared", manifest.name)));
                    }
                    declared
                }
                None => observed,
            };
            labels = set.into_iter().collect();
        }
        TaskKind::Regression => {
            for (s, split) in splits.iter().enumerate() {
                if split.records.iter().any(|r| matches!(r.target, RawTarget::Label(_))) {
                    return Err(CifmError::Data(format!("{}: {} has labels, task is regression", manifest.name, names[s])));
                }
                if s == 0 {
                    target_names = split.score_names.clone();
                } else if split.score_names != target_names {
                    return Err(CifmError::Data(format!("{}: {} score columns differ from train", manifest.name, names[s])));
                }
            }
            if let Some(d) = &manifest.target_dims {
                if d.len() != target_names.len() {
                    return Err(CifmError::Data(format!(
                        "{}: manifest declares {} target dims, files have {}",
                        manifest.name,
                        d.len(),
                        target_names.len()
                    )));
                }
                target_names = d.clone();
            }
        }
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut rows = BTreeMap::new();
    let mut converted: Vec<Vec<Example>> = Vec::new();
    for (s, split) in splits.iter().enumerate() {
        rows.insert(names[s].to_string(), split.records.len());
        converted.push(
            split
                .records
                .iter()
                .map(|r| Example {
                    text: r.text.clone(),
                    target: match &r.target {
                        RawTarget::Label(l) => Target::Class(index[l.as_str()]),
                        RawTarget::Scores(v) => Target::Scores(v.clone()),
                    },
                })
                .collect(),
        );
    }
    let texts: Vec<BTreeSet<&str>> = splits.iter().map(|s| s.records.iter().map(|r| r.text.as_str()).collect()).collect();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let shared = texts[a].intersection(&texts[b]).count();
        if shared > 0 {
            warnings.push(format!("{} texts appear in both {} and {}", shared, names[a], names[b]));
        }
    }
    for w in &warnings {
        log::warn!("{}: {w}", manifest.name);
    }
    let [train, val, test]: [Vec<Example>; 3] = converted.try_into().expect("three splits");
    let dataset = Dataset {
        name: manifest.name.clone(),
        task: manifest.task_kind,
        labels: labels.clone(),
        target_names,
        metrics,
        train,
        val,
        test,
    };
    dataset.validate()?;
    let report = IngestReport { name: manifest.name.clone(), rows, labels, warnings };
    log::info!("ingested {}: {:?}", report.name, report.rows);
    Ok((dataset, report))
}

/// Read a manifest and every split it names.
pub fn load_manifest(path: &Path) -> Result<(Dataset, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| CifmError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| CifmError::Config(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let files = [&manifest.splits.train, &manifest.splits.val, &manifest.splits.test];
    let resolved: Vec<PathBuf> = files.iter().map(|f| base.join(f)).collect();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        if resolved[a] == resolved[b] {
            return Err(CifmError::Config(format!("{}: splits share the file {}", manifest.name, resolved[a].display())));
        }
    }
    let mut raw = Vec::new();
    for p in &resolved {
        let format = match manifest.format {
            Some(f) => f,
            None => Format::from_path(p)?,
        };
        raw.push(ingest(p, format)?);
    }
    let splits: [RawSplit; 3] = raw.try_into().expect("three splits");
    build_dataset(&manifest, splits)
}

fn score_headers(names: &[String]) -> Vec<String> {
    if names.len() == 1 && names[0] == "score" {
        vec!["score".into()]
    } else {
        names.iter().map(|n| format!("score_{n}")).collect()
    }
}

fn write_split(path: &Path, dataset: &Dataset, rows: &[Example], format: Format) -> Result<()> {
    let label = |t: &Target| -> Result<Vec<String>> {
        match t {
            Target::Class(c) => Ok(vec![dataset
                .labels
                .get(*c)
                .ok_or_else(|| CifmError::Data(format!("label index {c} out of range")))?
                .clone()]),
            Target::Scores(v) => Ok(v.iter().map(|x| x.to_string()).collect()),
        }
    };
    match format {
        Format::Jsonl => {
            let mut out = std::io::BufWriter::new(fs::File::create(path)?);
            for ex in rows {
                let mut obj = serde_json::Map::new();
                obj.insert("text".into(), ex.text.clone().into());
                match &ex.target {
                    Target::Class(_) => {
                        obj.insert("label".into(), label(&ex.target)?.remove(0).into());
                    }
                    Target::Scores(v) => {
                        for (h, x) in score_headers(&dataset.target_names).into_iter().zip(v) {
                            obj.insert(h, serde_json::json!(x));
                        }
                    }
                }
                writeln!(out, "{}", serde_json::Value::Object(obj))?;
            }
            out.flush()?;
        }
        Format::Tsv | Format::Csv => {
            let tsv = format == Format::Tsv;
            let mut w = csv::WriterBuilder::new()
                .delimiter(if tsv { b'\t' } else { b',' })
                .quote_style(if tsv { csv::QuoteStyle::Never } else { csv::QuoteStyle::Necessary })
                .from_path(path)
                .map_err(|e| CifmError::Usage(format!("cannot write {}: {e}", path.display())))?;
            let mut header = vec!["text".to_string()];
            match dataset.task {
                TaskKind::Classification => header.push("label".into()),
                TaskKind::Regression => header.extend(score_headers(&dataset.target_names)),
            }
            let csv_err = |e: csv::Error| CifmError::Usage(format!("writing {}: {e}", path.display()));
            w.write_record(&header).map_err(csv_err)?;
            for (i, ex) in rows.iter().enumerate() {
                if tsv && ex.text.contains(['\t', '\n', '\r']) {
                    return Err(CifmError::Data(format!("row {i} has a tab or newline; export as csv or jsonl")));
                }
                let mut rec = vec![ex.text.clone()];
                rec.extend(label(&ex.target)?);
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Write `train/val/test.<ext>` and `manifest.toml` into `dir`.
pub fn export(dataset: &Dataset, dir: &Path, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let file = |s: &str| PathBuf::from(format!("{s}.{}", format.extension()));
    for (split, name) in [(Split::Train, "train"), (Split::Val, "val"), (Split::Test, "test")] {
        write_split(&dir.join(file(name)), dataset, dataset.split(split), format)?;
    }
    let manifest = DatasetManifest {
        name: dataset.name.clone(),
        task_kind: dataset.task,
        labels: (dataset.task == TaskKind::Classification).then(|| dataset.labels.clone()),
        target_dims: (dataset.task == TaskKind::Regression).then(|| dataset.target_names.clone()),
        splits: SplitFiles { train: file("train"), val: file("val"), test: file("test") },
        format: Some(format),
        metrics: Some(dataset.metrics.clone()),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, toml::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(path)
}
