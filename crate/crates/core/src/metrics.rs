//! Task metrics, the cross-task global average, the paired t-test and
//! representation-quality measures (uniformity, adjusted Rand index).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use cifm_autograd::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CifmError, Result};

/// A declared evaluation metric.
///
/// String forms: `macro_f1`, `macro_f1:favor,against`, `f1:ironic`,
/// `macro_recall`, `accuracy`, `pearson`, `spearman`, `pearson:1`, `spearman:2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricSpec {
    MacroF1,
    MacroF1Subset(Vec<String>),
    ClassF1(String),
    MacroRecall,
    Accuracy,
    Pearson(usize),
    Spearman(usize),
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::MacroF1 => write!(f, "macro_f1"),
            MetricSpec::MacroF1Subset(c) => write!(f, "macro_f1:{}", c.join(",")),
            MetricSpec::ClassF1(c) => write!(f, "f1:{c}"),
            MetricSpec::MacroRecall => write!(f, "macro_recall"),
            MetricSpec::Accuracy => write!(f, "accuracy"),
            MetricSpec::Pearson(0) => write!(f, "pearson"),
            MetricSpec::Spearman(0) => write!(f, "spearman"),
            MetricSpec::Pearson(d) => write!(f, "pearson:{d}"),
            MetricSpec::Spearman(d) => write!(f, "spearman:{d}"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = CifmError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let dim = |a: Option<&str>| -> Result<usize> {
            a.map_or(Ok(0), |a| a.parse().map_err(|_| CifmError::Config(format!("bad metric dimension in '{s}'"))))
        };
        Ok(match (head, arg) {
            ("macro_f1", None) => MetricSpec::MacroF1,
            ("macro_f1", Some(a)) => {
                MetricSpec::MacroF1Subset(a.split(',').map(|c| c.trim().to_string()).collect())
            }
            ("f1", Some(a)) => MetricSpec::ClassF1(a.to_string()),
            ("macro_recall", None) => MetricSpec::MacroRecall,
            ("accuracy", None) => MetricSpec::Accuracy,
            ("pearson", a) => MetricSpec::Pearson(dim(a)?),
            ("spearman", a) => MetricSpec::Spearman(dim(a)?),
            _ => return Err(CifmError::Config(format!("unknown metric '{s}'"))),
        })
    }
}

impl TryFrom<String> for MetricSpec {
    type Error = CifmError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricSpec> for String {
    fn from(m: MetricSpec) -> String {
        m.to_string()
    }
}

impl MetricSpec {
    pub fn is_classification(&self) -> bool {
        !matches!(self, MetricSpec::Pearson(_) | MetricSpec::Spearman(_))
    }
}

/// Model predictions for one split.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Values(Matrix),
}

/// Named metric values plus support and seed information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    /// Declared metrics in declaration order.
    pub metrics: Vec<(String, f64)>,
    pub support: usize,
    #[serde(default)]
    pub class_support: BTreeMap<String, usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub seed_stats: BTreeMap<String, SeedStats>,
}

impl MetricReport {
    /// Mean of the declared metrics; the task's headline score.
    pub fn headline(&self) -> f64 {
        if self.metrics.is_empty() {
            return f64::NAN;
        }
        self.metrics.iter().map(|(_, v)| v).sum::<f64>() / self.metrics.len() as f64
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl SeedStats {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std, values }
    }
}

fn check_aligned(gold: &[usize], pred: &[usize]) -> Result<()> {
    if gold.is_empty() {
        return Err(CifmError::Usage("metric on empty input".into()));
    }
    if gold.len() != pred.len() {
        return Err(CifmError::Usage(format!("{} gold vs {} predicted labels", gold.len(), pred.len())));
    }
    Ok(())
}

fn observed_classes(gold: &[usize], pred: &[usize]) -> Vec<usize> {
    let mut c: Vec<usize> = gold.iter().chain(pred).copied().collect();
    c.sort_unstable();
    c.dedup();
    c
}

fn class_counts(gold: &[usize], pred: &[usize], cls: usize) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&g, &p) in gold.iter().zip(pred) {
        match (g == cls, p == cls) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

/// F1 of a single class; zero when precision and recall are both undefined or zero.
pub fn f1_of_class(gold: &[usize], pred: &[usize], cls: usize) -> Result<f64> {
    check_aligned(gold, pred)?;
    let (tp, fp, fn_) = class_counts(gold, pred, cls);
    let denom = 2.0 * tp + fp + fn_;
    Ok(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom })
}

/// Unweighted mean of per-class F1 over `classes` (default: classes seen in either sequence).
pub fn macro_f1(gold: &[usize], pred: &[usize], classes: Option<&[usize]>) -> Result<f64> {
    check_aligned(gold, pred)?;
    let observed;
    let classes = match classes {
        Some(c) if !c.is_empty() => c,
        Some(_) => return Err(CifmError::Usage("empty class set".into())),
        None => {
            observed = observed_classes(gold, pred);
            &observed
        }
    };
    let mut total = 0.0;
    for &c in classes {
        total += f1_of_class(gold, pred, c)?;
    }
    Ok(total / classes.len() as f64)
}

/// Unweighted mean of per-class recall.
pub fn macro_recall(gold: &[usize], pred: &[usize], classes: Option<&[usize]>) -> Result<f64> {
    check_aligned(gold, pred)?;
    let observed;
    let classes = match classes {
        Some(c) if !c.is_empty() => c,
        Some(_) => return Err(CifmError::Usage("empty class set".into())),
        None => {
            observed = observed_classes(gold, pred);
            &observed
        }
    };
    let mut total = 0.0;
    for &c in classes {
        let (tp, _, fn_) = class_counts(gold, pred, c);
        if tp + fn_ > 0.0 {
            total += tp / (tp + fn_);
        }
    }
    Ok(total / classes.len() as f64)
}

pub fn accuracy(gold: &[usize], pred: &[usize]) -> Result<f64> {
    check_aligned(gold, pred)?;
    Ok(gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CifmError::Usage("pearson needs two aligned sequences of length >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CifmError::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CifmError::Usage("spearman needs two aligned sequences of length >= 2".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean over tasks of the mean over each task's metrics.
pub fn global_average(tasks: &[Vec<f64>]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(CifmError::Usage("global average of zero tasks".into()));
    }
    let mut total = 0.0;
    for (i, t) in tasks.iter().enumerate() {
        if t.is_empty() {
            return Err(CifmError::Usage(format!("task {i} contributes no metric")));
        }
        total += t.iter().sum::<f64>() / t.len() as f64;
    }
    Ok(total / tasks.len() as f64)
}

pub fn global_average_of(reports: &[MetricReport]) -> Result<f64> {
    let tasks: Vec<Vec<f64>> = reports.iter().map(|r| r.metrics.iter().map(|&(_, v)| v).collect()).collect();
    global_average(&tasks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// Differences had zero variance; `p_value` is exactly 0 or 1.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CifmError::Usage("paired t-test needs equal lengths >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, df, p_value: 1.0, degenerate: true }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, df, p_value: 0.0, degenerate: true }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| CifmError::Numeric(e.to_string()))?;
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, df, p_value, degenerate: false })
}

/// Log of the mean Gaussian potential over distinct pairs of unit-normalized rows.
/// Lower means more uniformly spread on the hypersphere.
pub fn uniformity(z: &Matrix, t: f64) -> Result<f64> {
    let n = z.nrows();
    if n < 2 {
        return Err(CifmError::Usage("uniformity needs at least two rows".into()));
    }
    let mut unit = z.clone();
    for mut row in unit.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let gram = unit.dot(&unit.t());
    let mut exps = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let sq = (gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]]).max(0.0);
            exps.push(-t * sq);
        }
    }
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = exps.iter().map(|e| (e - max).exp()).sum::<f64>() / exps.len() as f64;
    Ok(max + mean.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ari {
    pub value: f64,
    /// Chance-corrected index undefined (e.g. one cluster on both sides); value set to 1.
    pub degenerate: bool,
}

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari(gold: &[usize], clusters: &[usize]) -> Result<Ari> {
    if gold.len() != clusters.len() {
        return Err(CifmError::Usage("ari: misaligned sequences".into()));
    }
    let n = gold.len() as f64;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&g, &c) in gold.iter().zip(clusters) {
        *table.entry((g, c)).or_default() += 1.0;
        *rows.entry(g).or_default() += 1.0;
        *cols.entry(c).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(Ari { value: 1.0, degenerate: true });
    }
    Ok(Ari { value: (index - expected) / (max - expected), degenerate: false })
}

/// Lloyd's k-means with k-means++ seeding; returns cluster assignments.
pub fn kmeans(z: &Matrix, k: usize, seed: u64, iterations: usize) -> Result<Vec<usize>> {
    let n = z.nrows();
    if k == 0 || k > n {
        return Err(CifmError::Usage(format!("k-means with k={k} on {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let mut centers = Matrix::zeros((k, z.ncols()));
    centers.row_mut(0).assign(&z.row(rng.random_range(0..n)));
    for c in 1..k {
        let d: Vec<f64> = (0..n)
            .map(|i| (0..c).map(|j| dist2(z.row(i), centers.row(j))).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d.iter().position(|&x| {
                u -= x;
                u < 0.0
            })
            .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&z.row(pick));
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| dist2(z.row(i), centers.row(a)).total_cmp(&dist2(z.row(i), centers.row(b))))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(centers.dim());
        let mut counts = vec![0.0; k];
        for i in 0..n {
            let mut row = sums.row_mut(assign[i]);
            row += &z.row(i);
            counts[assign[i]] += 1.0;
        }
        for c in 0..k {
            if counts[c] > 0.0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c]));
            }
        }
        if !changed {
            break;
        }
    }
    Ok(assign)
}

/// Index of the largest entry of each row; ties resolve to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn class_index(labels: &[String], name: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == name)
        .ok_or_else(|| CifmError::Config(format!("metric refers to unknown class '{name}'")))
}

/// Compute the declared metrics for one split.
pub fn evaluate(
    specs: &[MetricSpec],
    labels: &[String],
    gold: &Predictions,
    pred: &Predictions,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    match (gold, pred) {
        (Predictions::Classes(g), Predictions::Classes(p)) => {
            report.support = g.len();
            for (i, l) in labels.iter().enumerate() {
                report.class_support.insert(l.clone(), g.iter().filter(|&&c| c == i).count());
            }
            let all: Vec<usize> = (0..labels.len()).collect();
            for spec in specs {
                let v = match spec {
                    MetricSpec::MacroF1 => macro_f1(g, p, Some(&all))?,
                    MetricSpec::MacroF1Subset(names) => {
                        let idx = names.iter().map(|n| class_index(labels, n)).collect::<Result<Vec<_>>>()?;
                        macro_f1(g, p, Some(&idx))?
                    }
                    MetricSpec::ClassF1(name) => f1_of_class(g, p, class_index(labels, name)?)?,
                    MetricSpec::MacroRecall => macro_recall(g, p, Some(&all))?,
                    MetricSpec::Accuracy => accuracy(g, p)?,
                    other => return Err(CifmError::Config(format!("{other} needs a regression task"))),
                };
                report.metrics.push((spec.to_string(), v));
            }
        }
        (Predictions::Values(g), Predictions::Values(p)) => {
            report.support = g.nrows();
            for spec in specs {
                let (dim, f): (usize, fn(&[f64], &[f64]) -> Result<f64>) = match spec {
                    MetricSpec::Pearson(d) => (*d, pearson),
                    MetricSpec::Spearman(d) => (*d, spearman),
                    other => return Err(CifmError::Config(format!("{other} needs a classification task"))),
                };
                if dim >= g.ncols() {
                    return Err(CifmError::Config(format!("{spec}: target has {} dims", g.ncols())));
                }
                let gc: Vec<f64> = g.column(dim).to_vec();
                let pc: Vec<f64> = p.column(dim).to_vec();
                // a collapsed predictor has no defined correlation; score it as 0
                let v = match f(&gc, &pc) {
                    Err(CifmError::UndefinedCorrelation(_)) => 0.0,
                    other => other?,
                };
                report.metrics.push((spec.to_string(), v));
            }
        }
        _ => return Err(CifmError::Usage("gold and predictions disagree on task kind".into())),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn f1_hand_confusion() {
        // gold=[0,0,1,1], pred=[0,1,0,1]: each class tp=1 fp=1 fn=1
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], None).unwrap(), 0.5);
        assert_eq!(f1_of_class(&[0, 0, 1, 1], &[0, 1, 0, 1], 1).unwrap(), 0.5);
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], None).unwrap(), 1.0);
        assert!(macro_f1(&[], &[], None).is_err());
    }

    #[test]
    fn declared_but_absent_class_counts_as_zero() {
        let v = macro_f1(&[0, 1], &[0, 1], Some(&[0, 1, 2])).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(macro_recall(&[0, 1, 1], &[0, 1, 1], None).unwrap(), 1.0);
        assert_eq!(macro_recall(&[0, 0, 1, 1], &[0, 0, 0, 0], None).unwrap(), 0.5);
        // class 0 recall 2/3, class 1 recall 1/2
        let v = macro_recall(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 0], None).unwrap();
        assert!((v - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn correlations() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[1.0, 4.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[2.0, 2.0, 2.0]), Err(CifmError::UndefinedCorrelation(_))));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn global_average_formula() {
        assert!((global_average(&[vec![0.5], vec![0.7, 0.9]]).unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(global_average(&[vec![0.3]]).unwrap(), 0.3);
        assert!(global_average(&[]).is_err());
        assert!(global_average(&[vec![]]).is_err());
    }

    #[test]
    fn t_test_degenerate_branches() {
        let same = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(same.degenerate && same.p_value == 1.0);
        let shifted = paired_t_test(&[2.0, 4.0, 6.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!(shifted.degenerate && shifted.p_value == 0.0);
    }

    #[test]
    fn uniformity_cases() {
        assert!((uniformity(&array![[1.0, 0.0], [-1.0, 0.0]], 2.0).unwrap() + 8.0).abs() < 1e-12);
        assert!((uniformity(&array![[1.0, 0.0], [0.0, 1.0]], 2.0).unwrap() + 4.0).abs() < 1e-12);
        assert_eq!(uniformity(&array![[0.3, 0.4], [3.0, 4.0]], 2.0).unwrap(), 0.0);
        assert!(uniformity(&array![[1.0, 0.0]], 2.0).is_err());
    }

    #[test]
    fn ari_cases() {
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap().value, 1.0);
        let single = ari(&[0, 0, 0], &[5, 5, 5]).unwrap();
        assert!(single.degenerate && single.value == 1.0);
    }

    #[test]
    fn metric_spec_strings() {
        for s in ["macro_f1", "macro_f1:favor,against", "f1:ironic", "macro_recall", "pearson", "spearman:2"] {
            assert_eq!(s.parse::<MetricSpec>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<MetricSpec>().is_err());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let z = array![[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]];
        let a = kmeans(&z, 2, 3, 20).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_ne!(a[0], a[2]);
    }
}
