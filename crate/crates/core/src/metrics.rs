//! Binary classification metrics. Class 1 (malignant) is the positive class.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("value {0} is not a 0/1 class")]
    BadClass(u8),
    #[error("ROC needs both classes; got only class {0}")]
    SingleClass(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Exact `numerator / denominator`, with `denominator > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    fn of(numerator: u64, denominator: u64) -> Option<Self> {
        (denominator > 0).then_some(Self { numerator, denominator })
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::Length {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            (1, bad) | (0, bad) => return Err(MetricsError::BadClass(bad)),
            (bad, _) => return Err(MetricsError::BadClass(bad)),
        }
    }
    Ok(c)
}

/// (TP + TN) / total.
pub fn accuracy(c: &ConfusionCounts) -> Result<Ratio, MetricsError> {
    Ratio::of(c.tp + c.tn, c.total()).ok_or(MetricsError::Empty)
}

/// TP / (TP + FP); `None` when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts) -> Option<Ratio> {
    Ratio::of(c.tp, c.tp + c.fp)
}

/// Sensitivity, TP / (TP + FN).
pub fn recall(c: &ConfusionCounts) -> Option<Ratio> {
    Ratio::of(c.tp, c.tp + c.fn_)
}

/// TN / (TN + FP).
pub fn specificity(c: &ConfusionCounts) -> Option<Ratio> {
    Ratio::of(c.tn, c.tn + c.fp)
}

/// Harmonic mean; undefined if either input is, or both are zero.
pub fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

/// F1 as the exact ratio 2TP / (2TP + FP + FN), defined exactly when [`f1`] is.
pub fn f1_ratio(c: &ConfusionCounts) -> Option<Ratio> {
    precision(c)?;
    recall(c)?;
    if c.tp == 0 {
        return None;
    }
    Ratio::of(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// `+inf` for the leading (0, 0) sentinel.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn thresholds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.threshold).collect()
    }

    /// One row per point; the `auc` column repeats the curve's area.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr,auc\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.threshold, p.fpr, p.tpr, self.auc);
        }
        out
    }
}

/// Threshold sweep over the distinct scores in descending order, predicting
/// positive when `score >= threshold`. The trapezoid area is accumulated in
/// integer counts, so it equals the pairwise rank statistic exactly.
pub fn roc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length {
            predictions: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(MetricsError::BadClass(bad));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(if labels.is_empty() {
            MetricsError::Empty
        } else {
            MetricsError::SingleClass(labels[0])
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = twice_area as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    /// Absent when the labels hold a single class.
    pub auc: Option<f64>,
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| x.to_string())
}

fn na4(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts, auc: Option<f64>) -> Result<Self, MetricsError> {
        let precision = precision(&counts).map(|r| r.value());
        let sensitivity = recall(&counts).map(|r| r.value());
        Ok(Self {
            counts,
            accuracy: accuracy(&counts)?.value(),
            precision,
            sensitivity,
            specificity: specificity(&counts).map(|r| r.value()),
            f1: f1(precision, sensitivity),
            auc,
        })
    }

    /// Confusion counts from `predictions`, AUC from `scores` when both classes are present.
    pub fn evaluate(scores: &[f64], predictions: &[u8], labels: &[u8]) -> Result<Self, MetricsError> {
        let counts = confusion(predictions, labels)?;
        let auc = match roc(scores, labels) {
            Ok(c) => Some(c.auc),
            Err(MetricsError::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        Self::from_counts(counts, auc)
    }

    /// `metric,value` rows; undefined values render as `N/A`.
    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("tp", c.tp.to_string()),
            ("fp", c.fp.to_string()),
            ("tn", c.tn.to_string()),
            ("fn", c.fn_.to_string()),
            ("accuracy", self.accuracy.to_string()),
            ("precision", na(self.precision)),
            ("sensitivity", na(self.sensitivity)),
            ("specificity", na(self.specificity)),
            ("f1", na(self.f1)),
            ("auc", na(self.auc)),
        ] {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let _ = writeln!(out, "confusion matrix (rows actual, columns predicted)");
        let _ = writeln!(out, "{:>18} {:>10} {:>10}", "", "benign", "malignant");
        let _ = writeln!(out, "{:>18} {:>10} {:>10}", "actual benign", c.tn, c.fp);
        let _ = writeln!(out, "{:>18} {:>10} {:>10}", "actual malignant", c.fn_, c.tp);
        let _ = writeln!(out);
        let _ = writeln!(out, "samples      {}", c.total());
        let _ = writeln!(out, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(out, "precision    {}", na4(self.precision));
        let _ = writeln!(out, "sensitivity  {}", na4(self.sensitivity));
        let _ = writeln!(out, "specificity  {}", na4(self.specificity));
        let _ = writeln!(out, "f1           {}", na4(self.f1));
        let _ = writeln!(out, "auc          {}", na4(self.auc));
        out
    }
}
