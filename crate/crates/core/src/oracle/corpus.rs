use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Target, TaskKind};
use crate::evalharness::LabelMap;
use crate::metrics::MetricSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Three classes, each marked by its own keywords.
    Separable,
    /// Three classes with weak keywords, cross-class confusers, spurious
    /// training-only cues and label noise in the training split.
    Noisy,
    /// Coarse 4-class source and fine 7-class target with a known merge map.
    TaxonomyPair,
    /// Real-valued score planted as a sum of keyword weights.
    Regression,
    /// Binary target decided by whether a planted bigram repeats a token.
    Xor,
}

impl std::str::FromStr for SyntheticKind {
    type Err = crate::error::CifmError;
    fn from_str(s: &str) -> crate::error::Result<Self> {
        Ok(match s {
            "separable" => SyntheticKind::Separable,
            "noisy" => SyntheticKind::Noisy,
            "taxonomy-pair" => SyntheticKind::TaxonomyPair,
            "regression" => SyntheticKind::Regression,
            "xor" => SyntheticKind::Xor,
            _ => return Err(crate::error::CifmError::Config(format!("unknown synthetic corpus '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CorpusSize {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl CorpusSize {
    pub fn default_for(kind: SyntheticKind) -> Self {
        match kind {
            SyntheticKind::Noisy => CorpusSize { train: 600, val: 200, test: 400 },
            _ => CorpusSize { train: 480, val: 160, test: 320 },
        }
    }
}

/// Generated datasets. `TaxonomyPair` yields `[coarse source, fine target]`
/// plus the coarse→fine map; every other kind yields one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub datasets: Vec<Dataset>,
    pub label_map: Option<LabelMap>,
}

impl SyntheticCorpus {
    pub fn primary(&self) -> &Dataset {
        &self.datasets[0]
    }
}

const FILLER: usize = 400;

fn filler(rng: &mut ChaCha8Rng) -> String {
    format!("f{}", rng.random_range(0..FILLER))
}

fn sentence(rng: &mut ChaCha8Rng, len: usize, planted: &[String]) -> String {
    let mut words: Vec<String> = (0..len).map(|_| filler(rng)).collect();
    for p in planted {
        let pos = rng.random_range(0..=words.len());
        words.insert(pos, p.clone());
    }
    words.join(" ")
}

fn class_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn dataset(name: &str, task: TaskKind, labels: Vec<String>, metrics: Vec<MetricSpec>, splits: [Vec<Example>; 3]) -> Dataset {
    let [train, val, test] = splits;
    let target_names = if task == TaskKind::Regression { vec!["score".into()] } else { vec![] };
    Dataset { name: name.into(), task, labels, target_names, metrics, train, val, test }
}

pub fn make_synthetic_corpus(kind: SyntheticKind, seed: u64) -> SyntheticCorpus {
    make_synthetic_corpus_sized(kind, seed, CorpusSize::default_for(kind))
}

pub fn make_synthetic_corpus_sized(kind: SyntheticKind, seed: u64, size: CorpusSize) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    let counts = [size.train, size.val, size.test];
    match kind {
        SyntheticKind::Separable => {
            let splits = counts.map(|n| {
                (0..n)
                    .map(|_| {
                        let c = rng.random_range(0..3);
                        let kws: Vec<String> = (0..2).map(|_| format!("k{c}_{}", rng.random_range(0..6))).collect();
                        let len = rng.random_range(6..12);
                        Example { text: sentence(&mut rng, len, &kws), target: Target::Class(c) }
                    })
                    .collect()
            });
            SyntheticCorpus {
                datasets: vec![dataset(
                    "synthetic-separable",
                    TaskKind::Classification,
                    class_names("c", 3),
                    vec![MetricSpec::MacroF1],
                    splits,
                )],
                label_map: None,
            }
        }
        SyntheticKind::Noisy => {
            let mut split_idx = 0;
            let splits = counts.map(|n| {
                let train = split_idx == 0;
                split_idx += 1;
                (0..n)
                    .map(|_| {
                        let c = rng.random_range(0..3usize);
                        let mut planted = Vec::new();
                        if rng.random_bool(0.8) {
                            planted.push(format!("n{c}_{}", rng.random_range(0..8)));
                        }
                        if rng.random_bool(0.35) {
                            let other = (c + rng.random_range(1..3)) % 3;
                            planted.push(format!("n{other}_{}", rng.random_range(0..8)));
                        }
                        // spurious cue: tied to the class only in training
                        let cue = if train && rng.random_bool(0.7) { c } else { rng.random_range(0..3) };
                        planted.push(format!("s{cue}"));
                        let len = rng.random_range(8..14);
                        let label = if train && rng.random_bool(0.1) { (c + rng.random_range(1..3)) % 3 } else { c };
                        Example { text: sentence(&mut rng, len, &planted), target: Target::Class(label) }
                    })
                    .collect()
            });
            SyntheticCorpus {
                datasets: vec![dataset(
                    "synthetic-noisy",
                    TaskKind::Classification,
                    class_names("n", 3),
                    vec![MetricSpec::MacroF1],
                    splits,
                )],
                label_map: None,
            }
        }
        SyntheticKind::TaxonomyPair => {
            // fine classes 0..6; coarse c0={f0,f1}, c1={f2,f3}, c2={f4}, c3={f5}; f6 has no coarse parent
            let coarse_of = |f: usize| -> Option<usize> {
                match f {
                    0 | 1 => Some(0),
                    2 | 3 => Some(1),
                    4 => Some(2),
                    5 => Some(3),
                    _ => None,
                }
            };
            let mut make = |n: usize, fine_classes: usize, coarse: bool| -> Vec<Example> {
                (0..n)
                    .map(|_| {
                        let f = rng.random_range(0..fine_classes);
                        let kws: Vec<String> = (0..2).map(|_| format!("t{f}_{}", rng.random_range(0..5))).collect();
                        let len = rng.random_range(6..12);
                        let target = if coarse { coarse_of(f).unwrap() } else { f };
                        Example { text: sentence(&mut rng, len, &kws), target: Target::Class(target) }
                    })
                    .collect()
            };
            let source = [make(counts[0], 6, true), make(counts[1], 6, true), make(counts[2], 6, true)];
            let target = [make(counts[0], 7, false), make(counts[1], 7, false), make(counts[2], 7, false)];
            let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for f in 0..7 {
                if let Some(c) = coarse_of(f) {
                    map.entry(format!("coarse{c}")).or_default().push(format!("fine{f}"));
                }
            }
            SyntheticCorpus {
                datasets: vec![
                    dataset(
                        "synthetic-coarse",
                        TaskKind::Classification,
                        class_names("coarse", 4),
                        vec![MetricSpec::MacroF1],
                        source,
                    ),
                    dataset(
                        "synthetic-fine",
                        TaskKind::Classification,
                        class_names("fine", 7),
                        vec![MetricSpec::MacroF1],
                        target,
                    ),
                ],
                label_map: Some(LabelMap::new(map)),
            }
        }
        SyntheticKind::Regression => {
            let weights: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let splits = counts.map(|n| {
                (0..n)
                    .map(|_| {
                        let k = rng.random_range(1..=4);
                        let mut ids: Vec<usize> = (0..10).collect();
                        ids.shuffle(&mut rng);
                        ids.truncate(k);
                        let score = ids.iter().map(|&i| weights[i]).sum::<f64>() + rng.random_range(-0.1..0.1);
                        let kws: Vec<String> = ids.iter().map(|i| format!("r{i}")).collect();
                        let len = rng.random_range(6..12);
                        Example { text: sentence(&mut rng, len, &kws), target: Target::Scores(vec![score]) }
                    })
                    .collect()
            });
            SyntheticCorpus {
                datasets: vec![dataset(
                    "synthetic-regression",
                    TaskKind::Regression,
                    vec![],
                    vec![MetricSpec::Pearson(0), MetricSpec::Spearman(0)],
                    splits,
                )],
                label_map: None,
            }
        }
        SyntheticKind::Xor => {
            let splits = counts.map(|n| {
                (0..n)
                    .map(|_| {
                        let a = rng.random_bool(0.5);
                        let b = rng.random_bool(0.5);
                        let tok = |x: bool| if x { "xa" } else { "xb" };
                        let len = rng.random_range(6..12);
                        let mut words: Vec<String> = (0..len).map(|_| filler(&mut rng)).collect();
                        let pos = rng.random_range(0..=words.len());
                        words.insert(pos, tok(b).into());
                        words.insert(pos, tok(a).into());
                        let label = usize::from(a == b);
                        Example { text: words.join(" "), target: Target::Class(label) }
                    })
                    .collect()
            });
            SyntheticCorpus {
                datasets: vec![dataset(
                    "synthetic-xor",
                    TaskKind::Classification,
                    vec!["diff".into(), "same".into()],
                    vec![MetricSpec::MacroF1],
                    splits,
                )],
                label_map: None,
            }
        }
    }
}
