//! Named config fragments.
//!
//! Benchmark presets carry per-task hyperparameters for the BERT and
//! RoBERTa backbones (`hateval-roberta`, `stanceeval-bert`, ...) on top of
//! the default training protocol. Synthetic presets pick a generated
//! corpus and the desk-scale training settings; objective presets (`ce`,
//! `ifm`, `cifm`, `cifm-mine`) switch the loss.

use toml::{Table, Value};

use crate::data::TaskKind;
use crate::error::{CifmError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub beta: f64,
    pub tau: f64,
    pub rate: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Benchmark {
    pub name: &'static str,
    pub task: TaskKind,
    /// Metric strings in the metrics registry format.
    pub metrics: &'static [&'static str],
    pub bert: Option<Hyper>,
    pub roberta: Hyper,
}

const fn h(beta: f64, tau: f64, rate: f64, epsilon: f64, weight_decay: f64) -> Hyper {
    Hyper { beta, tau, rate, epsilon, weight_decay }
}

use TaskKind::{Classification as C, Regression as R};

pub const BENCHMARKS: [Benchmark; 13] = [
    Benchmark { name: "emojieval", task: C, metrics: &["macro_f1"], bert: Some(h(1.0, 0.1, 1.0, 0.1, 0.0)), roberta: h(0.01, 0.1, 1.0, 0.1, 0.0) },
    Benchmark { name: "emotioneval", task: C, metrics: &["macro_f1"], bert: Some(h(0.1, 0.1, 1.0, 1.0, 0.001)), roberta: h(1.0, 0.5, 0.1, 5.0, 0.0) },
    Benchmark { name: "hateval", task: C, metrics: &["macro_f1"], bert: Some(h(10.0, 0.1, 1.0, 0.1, 0.01)), roberta: h(10.0, 0.1, 1.0, 0.1, 0.01) },
    Benchmark { name: "ironyeval", task: C, metrics: &["f1:ironic"], bert: Some(h(0.01, 1.0, 1.0, 5.0, 0.001)), roberta: h(1.0, 1.0, 0.1, 0.1, 0.01) },
    Benchmark { name: "offenseval", task: C, metrics: &["macro_f1"], bert: Some(h(0.01, 0.1, 0.1, 5.0, 0.0)), roberta: h(1.0, 1.0, 1.0, 1.0, 0.001) },
    Benchmark { name: "sentieval", task: C, metrics: &["macro_recall"], bert: Some(h(0.1, 0.5, 1.0, 1.0, 0.0)), roberta: h(0.01, 0.1, 1.0, 1.0, 0.0) },
    Benchmark { name: "stanceeval", task: C, metrics: &["macro_f1:against,favor"], bert: Some(h(0.1, 0.1, 1.0, 1.0, 0.001)), roberta: h(0.1, 0.5, 1.0, 0.1, 0.0) },
    Benchmark { name: "isear", task: C, metrics: &["macro_f1"], bert: Some(h(0.1, 0.1, 1.0, 5.0, 0.0)), roberta: h(0.1, 0.1, 1.0, 0.1, 0.0) },
    Benchmark { name: "meld", task: C, metrics: &["macro_f1"], bert: Some(h(0.1, 0.1, 1.0, 1.0, 0.001)), roberta: h(1.0, 1.0, 1.0, 1.0, 0.0) },
    Benchmark { name: "goemotions", task: C, metrics: &["macro_f1"], bert: Some(h(0.1, 0.1, 1.0, 0.1, 0.0)), roberta: h(0.1, 0.1, 1.0, 1.0, 0.0) },
    Benchmark { name: "sts-b", task: R, metrics: &["spearman", "pearson"], bert: None, roberta: h(0.001, 0.1, 1.0, 5.0, 0.0) },
    Benchmark { name: "claire", task: R, metrics: &["spearman", "pearson"], bert: None, roberta: h(0.01, 1.0, 0.1, 0.1, 0.0) },
    Benchmark { name: "emobank", task: R, metrics: &["pearson:0", "pearson:1", "pearson:2"], bert: None, roberta: h(0.01, 1.0, 0.1, 1.0, 0.0) },
];

pub fn benchmark(name: &str) -> Option<&'static Benchmark> {
    let key = name.to_ascii_lowercase();
    BENCHMARKS.iter().find(|b| b.name == key)
}

const SYNTHETIC: [&str; 5] = ["separable", "noisy", "taxonomy-pair", "regression", "xor"];

/// Every preset name, in listing order.
pub fn names() -> Vec<String> {
    let mut out: Vec<String> = ["ce", "ifm", "cifm", "cifm-mine", "desk"].iter().map(|s| s.to_string()).collect();
    out.extend(SYNTHETIC.iter().map(|s| format!("synthetic-{s}")));
    for b in &BENCHMARKS {
        if b.bert.is_some() {
            out.push(format!("{}-bert", b.name));
        }
        out.push(format!("{}-roberta", b.name));
    }
    out
}

fn parse(text: &str) -> Table {
    text.parse().expect("preset fragments are valid TOML")
}

/// Tiny transformer and training settings that converge in seconds on one core.
const DESK: &str = r#"
[train]
epochs = 20
batch_size = 32
max_length = 32
lr = 2e-3
patience = 5

[encoder]
backbone = "transformer"
vocab_size = 4096
"#;

pub fn preset(name: &str) -> Result<Table> {
    let t = match name {
        "ce" => parse("[objective]\nbeta = 0.0\n"),
        "ifm" => parse("[objective]\nbeta = 0.1\ntau = 0.1\nmi_estimator = \"infonce\"\n"),
        "cifm" => parse(
            "[objective]\nbeta = 0.1\ntau = 0.1\nmi_estimator = \"infonce\"\n[cim]\nepsilon = 0.03\nrate = 1.0\n",
        ),
        "cifm-mine" => parse(
            "[objective]\nbeta = 0.1\ntau = 0.1\nmi_estimator = \"mine\"\n[cim]\nepsilon = 0.03\nrate = 1.0\n",
        ),
        "desk" => parse(DESK),
        _ => {
            if let Some(kind) = name.strip_prefix("synthetic-").filter(|k| SYNTHETIC.contains(k)) {
                let mut t = parse(DESK);
                let mut d = Table::new();
                d.insert("synthetic".into(), Value::String(kind.into()));
                t.insert("dataset".into(), Value::Table(d));
                t
            } else if let Some(t) = benchmark_preset(name) {
                t
            } else {
                return Err(CifmError::Config(format!("unknown preset '{name}'; `cifm presets` lists them")));
            }
        }
    };
    Ok(t)
}

fn benchmark_preset(name: &str) -> Option<Table> {
    let (bench, backbone) = name.rsplit_once('-')?;
    let b = benchmark(bench)?;
    let hp = match backbone {
        "bert" => b.bert?,
        "roberta" => b.roberta,
        _ => return None,
    };
    Some(parse(&format!(
        "[objective]\nbeta = {:?}\ntau = {:?}\ntask_kind = \"{}\"\n[cim]\nepsilon = {:?}\nrate = {:?}\n[train]\nweight_decay = {:?}\n",
        hp.beta,
        hp.tau,
        match b.task {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        },
        hp.epsilon,
        hp.rate,
        hp.weight_decay
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for n in names() {
            preset(&n).unwrap();
        }
        assert!(preset("hateval-gpt").is_err());
        assert!(preset("sts-b-bert").is_err());
    }

    #[test]
    fn hateval_roberta_row() {
        let t = preset("hateval-roberta").unwrap();
        assert_eq!(t["objective"]["beta"].as_float(), Some(10.0));
        assert_eq!(t["objective"]["tau"].as_float(), Some(0.1));
        assert_eq!(t["cim"]["rate"].as_float(), Some(1.0));
        assert_eq!(t["cim"]["epsilon"].as_float(), Some(0.1));
        assert_eq!(t["train"]["weight_decay"].as_float(), Some(0.01));
    }

    #[test]
    fn metrics_parse() {
        for b in &BENCHMARKS {
            for m in b.metrics {
                m.parse::<crate::metrics::MetricSpec>().unwrap();
            }
        }
    }
}
