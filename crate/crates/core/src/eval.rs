//! ROC/AUC scoring of probability maps against a ternary ground truth.

use std::fmt::Write as _;

use thiserror::Error;

use crate::world::{CellState, GridMap};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("probability grid has {found} cells, truth has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("ROC needs both occupied and free cells ({occupied} occupied, {free} free)")]
    SingleClass { occupied: usize, free: usize },
    #[error("probabilities and labels differ in length")]
    LengthMismatch,
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPairs {
    pub probs: Vec<f64>,
    /// 1 occupied, 0 free.
    pub labels: Vec<u8>,
}

impl LabeledPairs {
    pub fn new(probs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(EvalError::LengthMismatch);
        }
        Ok(Self { probs, labels })
    }

    pub fn count(&self) -> usize {
        self.probs.len()
    }
}

/// One pair per known truth cell; unknown cells are skipped.
pub fn make_pairs(probs: &[f64], truth: &GridMap) -> Result<LabeledPairs> {
    if probs.len() != truth.cells.len() {
        return Err(EvalError::DimensionMismatch {
            expected: truth.cells.len(),
            found: probs.len(),
        });
    }
    let mut out = LabeledPairs::default();
    for (&p, &c) in probs.iter().zip(&truth.cells) {
        let label = match c {
            CellState::Occupied => 1,
            CellState::Free => 0,
            CellState::Unknown => continue,
        };
        out.probs.push(p);
        out.labels.push(label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (fpr, tpr) from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point; the first is `+inf`, the last `-inf`.
    pub thresholds: Vec<f64>,
}

/// ROC curve and its trapezoidal area. A cell is predicted occupied when
/// its probability is at least the threshold.
pub fn roc_auc(pairs: &LabeledPairs) -> Result<(RocCurve, f64)> {
    let pos = pairs.labels.iter().filter(|&&l| l == 1).count();
    let neg = pairs.count() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass {
            occupied: pos,
            free: neg,
        });
    }
    let mut order: Vec<usize> = (0..pairs.count()).collect();
    order.sort_by(|&a, &b| pairs.probs[b].total_cmp(&pairs.probs[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = pairs.probs[order[i]];
        while i < order.len() && pairs.probs[order[i]] == t {
            if pairs.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (p.0 - x0) * (p.1 + y0) * 0.5;
        points.push(p);
        thresholds.push(t);
    }
    // the lowest real threshold already reaches (1, 1)
    points.push((1.0, 1.0));
    thresholds.push(f64::NEG_INFINITY);
    Ok((RocCurve { points, thresholds }, auc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub name: String,
    pub auc: f64,
    pub cells: usize,
}

/// Scores every named map against the truth, sorted by name.
pub fn auc_report(maps: &[(String, Vec<f64>)], truth: &GridMap) -> Result<Vec<AucRow>> {
    let mut rows = maps
        .iter()
        .map(|(name, probs)| {
            let pairs = make_pairs(probs, truth)?;
            let (_, auc) = roc_auc(&pairs)?;
            Ok(AucRow {
                name: name.clone(),
                auc,
                cells: pairs.count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(rows)
}

pub fn format_report(rows: &[AucRow]) -> String {
    let mut out = String::from("name,auc,cells\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{}", r.name, r.auc, r.cells);
    }
    out
}

pub fn format_roc(name: &str, curve: &RocCurve) -> String {
    let mut out = String::new();
    for (&(fpr, tpr), &t) in curve.points.iter().zip(&curve.thresholds) {
        let _ = writeln!(out, "{name},{t},{fpr},{tpr}");
    }
    out
}
