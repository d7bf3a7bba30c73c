//! Threshold metrics, ROC and precision-recall curves and their areas.
//!
//! Curves sweep the distinct scores from high to low; instances sharing a
//! score enter together, so ties never depend on input order. auROC is the
//! trapezoidal area (the Mann-Whitney statistic with half credit for ties)
//! and auPR the step sum `sum (R_i - R_{i-1}) * P_i`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores (higher means more likely positive) with their 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::ShapeMismatch("labels must be 0 or 1".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Cumulative `(tp, fp)` after each block of tied scores, highest score
    /// first, starting from `(0, 0)`.
    fn sweep(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out = vec![(0, 0)];
        let (mut tp, mut fp) = (0, 0);
        for (pos, &i) in order.iter().enumerate() {
            if self.labels[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_block = order
                .get(pos + 1)
                .is_none_or(|&j| self.scores[j] != self.scores[i]);
            if last_of_block {
                out.push((tp, fp));
            }
        }
        out
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::SingleClass {
                positives: p,
                negatives: n,
            });
        }
        Ok((p, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Rates with zero denominators reported as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub fpr: Option<f64>,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// An instance is predicted positive iff its score is `>= threshold`.
pub fn confusion_counts(s: &ScoredLabels, threshold: f64) -> Result<ConfusionCounts> {
    if s.is_empty() {
        return Err(Error::Empty("confusion table of zero instances".into()));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&score, &y) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

impl ConfusionCounts {
    pub fn rates(&self) -> ConfusionRates {
        let ConfusionCounts { tp, fp, tn, fn_ } = *self;
        let specificity = ratio(tn, tn + fp);
        ConfusionRates {
            sensitivity: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            specificity,
            fpr: ratio(fp, tn + fp),
            accuracy: (tp + tn) as f64 / (tp + fp + tn + fn_) as f64,
        }
    }
}

pub fn confusion_rates(s: &ScoredLabels, threshold: f64) -> Result<ConfusionRates> {
    Ok(confusion_counts(s, threshold)?.rates())
}

/// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(s: &ScoredLabels) -> Result<Vec<(f64, f64)>> {
    let (p, n) = s.require_both()?;
    Ok(s.sweep()
        .into_iter()
        .map(|(tp, fp)| (fp as f64 / n as f64, tp as f64 / p as f64))
        .collect())
}

pub fn auroc(s: &ScoredLabels) -> Result<f64> {
    let pts = roc_curve(s)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// `(recall, precision)` after each tie block, highest score first.
pub fn pr_curve(s: &ScoredLabels) -> Result<Vec<(f64, f64)>> {
    let p = s.positives();
    if p == 0 {
        return Err(Error::NoPositives("scored labels".into()));
    }
    Ok(s.sweep()
        .into_iter()
        .skip(1)
        .map(|(tp, fp)| (tp as f64 / p as f64, tp as f64 / (tp + fp) as f64))
        .collect())
}

pub fn aupr(s: &ScoredLabels) -> Result<f64> {
    let mut prev = 0.0;
    let mut area = 0.0;
    for (r, prec) in pr_curve(s)? {
        area += (r - prev) * prec;
        prev = r;
    }
    Ok(area)
}

/// Metrics of one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub repeat: usize,
    pub fold: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub threshold: f64,
    pub rates: ConfusionRates,
}

impl FoldMetrics {
    pub fn evaluate(s: &ScoredLabels, repeat: usize, fold: usize, threshold: f64) -> Result<Self> {
        Ok(FoldMetrics {
            repeat,
            fold,
            auroc: auroc(s)?,
            aupr: aupr(s)?,
            threshold,
            rates: confusion_rates(s, threshold)?,
        })
    }

    /// Named values; undefined rates are left out.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let r = &self.rates;
        let mut v = vec![("auroc", self.auroc), ("aupr", self.aupr)];
        for (name, x) in [
            ("sensitivity", r.sensitivity),
            ("specificity", r.specificity),
            ("precision", r.precision),
            ("fpr", r.fpr),
        ] {
            if let Some(x) = x {
                v.push((name, x));
            }
        }
        v.push(("accuracy", r.accuracy));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
    /// Number of folds where the metric was defined.
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldMetrics>,
    pub summary: BTreeMap<String, Summary>,
}

impl EvalReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).map(|s| s.mean)
    }
}

/// Unweighted mean and sample standard deviation of every metric over all
/// folds and repeats.
pub fn aggregate(folds: Vec<FoldMetrics>) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Empty("no fold metrics to aggregate".into()));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in &folds {
        for (name, v) in f.values() {
            columns.entry(name.to_string()).or_default().push(v);
        }
    }
    let summary = columns
        .into_iter()
        .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
        .collect();
    Ok(EvalReport { folds, summary })
}

/// Writes `<dataset>_r<repeat>_f<fold>_roc.csv` (`fpr,tpr`) and
/// `..._pr.csv` (`recall,precision`) into `dir`.
pub fn write_curves(dir: &Path, dataset: &str, repeat: usize, fold: usize, s: &ScoredLabels) -> Result<[PathBuf; 2]> {
    let stem = curve_stem(dataset, repeat, fold);
    let roc = dir.join(format!("{stem}_roc.csv"));
    let pr = dir.join(format!("{stem}_pr.csv"));
    write_points(&roc, "fpr,tpr", &roc_curve(s)?)?;
    write_points(&pr, "recall,precision", &pr_curve(s)?)?;
    Ok([roc, pr])
}

pub fn curve_stem(dataset: &str, repeat: usize, fold: usize) -> String {
    format!("{dataset}_r{repeat}_f{fold}")
}

fn write_points(path: &Path, header: &str, pts: &[(f64, f64)]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut f = fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut text = format!("{header}\n");
    for (x, y) in pts {
        text.push_str(&format!("{x},{y}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(ctx(), e))
}
