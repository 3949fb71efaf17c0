//! Weighted-sum score fusion.
//!
//! `f_s = w_1·x_1 + … + w_n·x_n` with the weights normalized to sum to 1, so
//! the fused value is a convex combination of the per-model probabilities.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("fusion weights must be finite and non-negative, got {0:?}")]
    NegativeWeight(Vec<f64>),
    #[error("fusion weights are all zero")]
    AllZero,
    #[error("record {id:?} has {scores} scores for {weights} weights")]
    Arity { id: String, scores: usize, weights: usize },
    #[error("record {id:?}: score {score} is outside [0, 1]")]
    ScoreRange { id: String, score: f64 },
    #[error("record {0:?} has no label")]
    Unlabeled(String),
    #[error("no records")]
    Empty,
    #[error("weight sweep needs exactly 2 models, got {0}")]
    SweepArity(usize),
    #[error("grid step {0} must lie in (0, 1]")]
    Step(f64),
    #[error("scores file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("score files disagree: {0}")]
    IdMismatch(String),
}

/// Normalized non-negative weights, one per model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(raw: &[f64]) -> Result<Self, FusionError> {
        if raw.is_empty() || raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FusionError::NegativeWeight(raw.to_vec()));
        }
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return Err(FusionError::AllZero);
        }
        Ok(Self(raw.iter().map(|w| w / total).collect()))
    }

    /// 0.45 for the inception-style model, 0.55 for the dense-block model.
    pub fn default_pair() -> Self {
        Self::new(&[0.45, 0.55]).expect("valid default")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: Vec<f64>,
    pub label: Option<u8>,
}

pub fn fuse_scores(weights: &FusionWeights, record: &ScoreRecord) -> Result<f64, FusionError> {
    if record.scores.len() != weights.len() {
        return Err(FusionError::Arity {
            id: record.id.clone(),
            scores: record.scores.len(),
            weights: weights.len(),
        });
    }
    if let Some(&score) = record.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(FusionError::ScoreRange {
            id: record.id.clone(),
            score,
        });
    }
    let fused: f64 = weights.0.iter().zip(&record.scores).map(|(w, x)| w * x).sum();
    // Only rounding can leave the hull of the inputs.
    let lo = record.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = record.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(fused.clamp(lo, hi))
}

/// Class 1 iff `score >= threshold`.
pub fn decide(score: f64, threshold: f64) -> u8 {
    (score >= threshold) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub w1: f64,
    pub w2: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub best: FusionWeights,
    pub best_row: usize,
    pub table: Vec<SweepRow>,
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w1,w2,accuracy\n");
        for r in &self.table {
            let _ = writeln!(out, "{},{},{}", r.w1, r.w2, r.accuracy);
        }
        out
    }
}

/// Grid search over `w1 ∈ {0, step, …, 1}`, `w2 = 1 − w1`, maximizing
/// accuracy at `threshold`; the lowest `w1` wins ties.
pub fn weight_sweep(records: &[ScoreRecord], step: f64, threshold: f64) -> Result<Sweep, FusionError> {
    if records.is_empty() {
        return Err(FusionError::Empty);
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(FusionError::Step(step));
    }
    for r in records {
        if r.scores.len() != 2 {
            return Err(FusionError::SweepArity(r.scores.len()));
        }
        if r.label.is_none() {
            return Err(FusionError::Unlabeled(r.id.clone()));
        }
    }
    let steps = (1.0 / step).round() as usize;
    let mut table = Vec::with_capacity(steps + 1);
    let mut best_row = 0;
    for i in 0..=steps {
        let w1 = (i as f64 * step).min(1.0);
        let w = FusionWeights::new(&[w1, 1.0 - w1])?;
        let mut hits = 0usize;
        for r in records {
            if decide(fuse_scores(&w, r)?, threshold) == r.label.expect("checked") {
                hits += 1;
            }
        }
        let accuracy = hits as f64 / records.len() as f64;
        if accuracy > table.get(best_row).map_or(f64::NEG_INFINITY, |r: &SweepRow| r.accuracy) {
            best_row = i;
        }
        table.push(SweepRow { w1, w2: 1.0 - w1, accuracy });
    }
    let best = FusionWeights::new(&[table[best_row].w1, table[best_row].w2])?;
    Ok(Sweep { best, best_row, table })
}

/// Reads `id,score_1,…,score_n[,label]`. A column named `label` must be last.
pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRecord>, FusionError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| FusionError::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.first() != Some(&"id") {
        return Err(FusionError::Parse {
            line: 1,
            reason: "first column must be id".into(),
        });
    }
    let has_label = cols.last() == Some(&"label");
    let n_scores = cols.len() - 1 - has_label as usize;
    if n_scores == 0 {
        return Err(FusionError::Parse {
            line: 1,
            reason: "no score columns".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| FusionError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id = row[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(FusionError::Parse {
                line,
                reason: format!("duplicate id {id:?}"),
            });
        }
        let scores = (1..=n_scores)
            .map(|c| {
                row[c].trim().parse::<f64>().map_err(|_| FusionError::Parse {
                    line,
                    reason: format!("bad score {:?}", &row[c]),
                })
            })
            .collect::<Result<_, _>>()?;
        let label = if has_label {
            match row[cols.len() - 1].trim() {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(FusionError::Parse {
                        line,
                        reason: format!("bad label {other:?}"),
                    })
                }
            }
        } else {
            None
        };
        out.push(ScoreRecord { id, scores, label });
    }
    Ok(out)
}

/// Pairs two score tables by id, keeping the order of `a`. Labels must agree.
pub fn join_scores(a: &[ScoreRecord], b: &[ScoreRecord]) -> Result<Vec<ScoreRecord>, FusionError> {
    if a.len() != b.len() {
        let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
        let ids: HashSet<&str> = short.iter().map(|r| r.id.as_str()).collect();
        let extra = long.iter().find(|r| !ids.contains(r.id.as_str())).map_or("?", |r| r.id.as_str());
        return Err(FusionError::IdMismatch(format!(
            "{} vs {} rows; first id present in only one file: {extra:?}",
            a.len(),
            b.len()
        )));
    }
    let index: std::collections::HashMap<&str, &ScoreRecord> = b.iter().map(|r| (r.id.as_str(), r)).collect();
    a.iter()
        .map(|ra| {
            let rb = index
                .get(ra.id.as_str())
                .ok_or_else(|| FusionError::IdMismatch(format!("first id present in only one file: {:?}", ra.id)))?;
            if ra.label.is_some() && rb.label.is_some() && ra.label != rb.label {
                return Err(FusionError::IdMismatch(format!("labels differ for id {:?}", ra.id)));
            }
            let mut scores = ra.scores.clone();
            scores.extend_from_slice(&rb.scores);
            Ok(ScoreRecord {
                id: ra.id.clone(),
                scores,
                label: ra.label.or(rb.label),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedRecord {
    pub id: String,
    pub fused: f64,
    pub decision: u8,
    pub label: Option<u8>,
}

pub fn fuse_all(weights: &FusionWeights, records: &[ScoreRecord], threshold: f64) -> Result<Vec<FusedRecord>, FusionError> {
    records
        .iter()
        .map(|r| {
            let fused = fuse_scores(weights, r)?;
            Ok(FusedRecord {
                id: r.id.clone(),
                fused,
                decision: decide(fused, threshold),
                label: r.label,
            })
        })
        .collect()
}

/// `id,fused_score,decision,label` (label column left empty when unknown).
pub fn fused_to_csv(records: &[FusedRecord]) -> String {
    let mut out = String::from("id,fused_score,decision,label\n");
    for r in records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.id, r.fused, r.decision, label);
    }
    out
}

pub fn parse_fused_csv(text: &str) -> Result<Vec<FusedRecord>, FusionError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| FusionError::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["id", "fused_score", "decision", "label"] {
        return Err(FusionError::Parse {
            line: 1,
            reason: "header must be id,fused_score,decision,label".into(),
        });
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| FusionError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| FusionError::Parse {
            line,
            reason: format!("bad {what}"),
        };
        let fused = row[1].trim().parse().map_err(|_| bad("fused_score"))?;
        let decision = match row[2].trim() {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("decision")),
        };
        let label = match row[3].trim() {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            _ => return Err(bad("label")),
        };
        out.push(FusedRecord {
            id: row[0].trim().to_string(),
            fused,
            decision,
            label,
        });
    }
    Ok(out)
}
