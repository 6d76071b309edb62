use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Target};
use crate::error::{CifmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum SubsampleMode {
    #[default]
    Uniform,
    /// Per-class quotas by largest remainder, at least one row per class.
    Stratified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub ratio: f64,
    pub seed: u64,
    /// Sorted row indices into the training split.
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

fn rng_for(ratio: f64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ratio.to_bits().rotate_left(17))
}

/// One independent subset per `(ratio, seed)`; `|subset| = round(ratio·N)`.
pub fn subsample_protocol(train: &[Example], ratios: &[f64], seeds: &[u64], mode: SubsampleMode) -> Result<Vec<Subset>> {
    let n = train.len();
    if n == 0 {
        return Err(CifmError::Usage("cannot subsample an empty split".into()));
    }
    let mut out = Vec::new();
    for &ratio in ratios {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(CifmError::Usage(format!("ratio {ratio} outside (0, 1]")));
        }
        let want = ((ratio * n as f64).round() as usize).max(1);
        for &seed in seeds {
            let mut rng = rng_for(ratio, seed);
            let mut warnings = Vec::new();
            let classes: Option<Vec<usize>> = train
                .iter()
                .map(|e| match e.target {
                    Target::Class(c) => Some(c),
                    Target::Scores(_) => None,
                })
                .collect();
            let mut indices = match (mode, classes) {
                (SubsampleMode::Stratified, Some(classes)) => {
                    stratified(&classes, ratio, want, &mut rng, &mut warnings)
                }
                _ => {
                    let mut idx: Vec<usize> = (0..n).collect();
                    idx.shuffle(&mut rng);
                    idx.truncate(want);
                    idx
                }
            };
            indices.sort_unstable();
            for w in &warnings {
                log::warn!("{w}");
            }
            out.push(Subset { ratio, seed, indices, warnings });
        }
    }
    Ok(out)
}

fn stratified(classes: &[usize], ratio: f64, want: usize, rng: &mut ChaCha8Rng, warnings: &mut Vec<String>) -> Vec<usize> {
    let k = classes.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in classes.iter().enumerate() {
        members[c].push(i);
    }
    let n = classes.len() as f64;
    let exact: Vec<f64> = members.iter().map(|m| want as f64 * m.len() as f64 / n).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = want - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    // largest remainder first, ties to the lower class index
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &c in &order {
        if left == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            left -= 1;
        }
    }
    for c in 0..k {
        if !members[c].is_empty() && quota[c] == 0 {
            warnings.push(format!("ratio {ratio} leaves class {c} without samples; keeping one"));
            quota[c] = 1;
        }
    }
    let mut out = Vec::new();
    for (c, m) in members.iter_mut().enumerate() {
        m.shuffle(rng);
        out.extend_from_slice(&m[..quota[c]]);
    }
    out
}

/// Copy of `dataset` whose training split is restricted to `subset`.
pub fn subset_dataset(dataset: &Dataset, subset: &Subset) -> Dataset {
    Dataset {
        name: format!("{}@{}#{}", dataset.name, subset.ratio, subset.seed),
        train: subset.indices.iter().map(|&i| dataset.train[i].clone()).collect(),
        ..dataset.clone()
    }
}
