//! Evaluation: confusion matrix, scalar metrics, ROC / precision-recall
//! curves and permutation importance.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};
use crate::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            (1, 1) => cm.tp += 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "non-binary label/prediction ({l}, {p})"
                )))
            }
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

pub fn scalar_metrics(cm: &ConfusionMatrix) -> Result<ScalarMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut undefined = Vec::new();
    let mut ratio = |name: &str, num: u64, den: u64| {
        if den == 0 {
            undefined.push(name.to_string());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let precision = ratio("precision", cm.tp, cm.tp + cm.fp);
    let recall = ratio("recall", cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push("f1".to_string());
        0.0
    };
    Ok(ScalarMetrics {
        accuracy,
        precision,
        recall,
        f1,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Cumulative (tp, fp, threshold) at each distinct score, descending.
fn sweep(labels: &[u8], scores: &[f64]) -> Vec<(u64, u64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(u64, u64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = k + 1 == order.len() || scores[order[k + 1]] != scores[i];
        if last_of_group {
            out.push((tp, fp, scores[i]));
        }
    }
    out
}

fn check_inputs(labels: &[u8], scores: &[f64]) -> Result<(u64, u64)> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    Ok((pos, labels.len() as u64 - pos))
}

/// ROC curve `(FPR, TPR, threshold)` from `(0, 0)` to `(1, 1)` and its
/// trapezoidal area. The leading point carries threshold `max score + 1`.
pub fn roc(labels: &[u8], scores: &[f64]) -> Result<(Vec<CurvePoint>, f64)> {
    let (pos, neg) = check_inputs(labels, scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let steps = sweep(labels, scores);
    let mut points = Vec::with_capacity(steps.len() + 1);
    points.push(CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: steps[0].2 + 1.0,
    });
    for &(tp, fp, t) in &steps {
        points.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum();
    Ok((points, auc))
}

/// Precision-recall curve `(recall, precision, threshold)` and step-wise
/// average precision `Σ (R_k − R_{k−1})·P_k`.
pub fn pr(labels: &[u8], scores: &[f64]) -> Result<(Vec<CurvePoint>, f64)> {
    let (pos, _) = check_inputs(labels, scores)?;
    if pos == 0 {
        return Err(Error::InvalidArgument(
            "precision-recall needs at least one positive".into(),
        ));
    }
    let steps = sweep(labels, scores);
    let mut points = Vec::with_capacity(steps.len() + 1);
    points.push(CurvePoint {
        x: 0.0,
        y: 1.0,
        threshold: steps[0].2 + 1.0,
    });
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(tp, fp, t) in &steps {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(CurvePoint {
            x: recall,
            y: precision,
            threshold: t,
        });
    }
    Ok((points, ap))
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("x,y,threshold\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.x, p.y, p.threshold);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub undefined: Vec<String>,
    pub roc: Vec<CurvePoint>,
    pub pr: Vec<CurvePoint>,
}

pub fn evaluate(labels: &[u8], scores: &[f64], threshold: f64) -> Result<EvalReport> {
    let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let cm = confusion(labels, &preds)?;
    let s = scalar_metrics(&cm)?;
    let (roc_points, roc_auc) = roc(labels, scores)?;
    let (pr_points, pr_auc) = pr(labels, scores)?;
    Ok(EvalReport {
        n: labels.len(),
        threshold,
        confusion: cm,
        accuracy: s.accuracy,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        roc_auc,
        pr_auc,
        undefined: s.undefined,
        roc: roc_points,
        pr: pr_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    RocAuc,
    Accuracy,
}

impl Metric {
    pub fn score(self, labels: &[u8], probs: &[f64]) -> Result<f64> {
        match self {
            Metric::RocAuc => roc(labels, probs).map(|r| r.1),
            Metric::Accuracy => {
                if labels.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                let hits = labels
                    .iter()
                    .zip(probs)
                    .filter(|(&l, &p)| u8::from(p >= 0.5) == l)
                    .count();
                Ok(hits as f64 / labels.len() as f64)
            }
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roc_auc" | "roc-auc" | "auc" => Ok(Metric::RocAuc),
            "accuracy" => Ok(Metric::Accuracy),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationScore {
    pub name: String,
    pub mean_drop: f64,
    pub std: f64,
}

/// Metric drop after shuffling each column, averaged over `repeats`.
/// Repeat `r` of column `j` shuffles with a seed derived from
/// `(seed, j, r)`.
pub fn permutation_importance(
    model: &dyn Classifier,
    x: &Matrix,
    labels: &[u8],
    names: &[String],
    metric: Metric,
    repeats: usize,
    seed: u64,
) -> Result<Vec<PermutationScore>> {
    if names.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: names.len(),
        });
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let baseline = metric.score(labels, &model.predict_proba(x)?)?;
    (0..x.cols())
        .into_par_iter()
        .map(|j| {
            let mut drops = Vec::with_capacity(repeats);
            let original = x.column_vec(j);
            for r in 0..repeats {
                let mut col = original.clone();
                col.shuffle(&mut rng::seeded(derive_seed(
                    derive_seed(seed, j as u64),
                    r as u64,
                )));
                let mut shuffled = x.clone();
                for (i, v) in col.into_iter().enumerate() {
                    shuffled.set(i, j, v);
                }
                drops.push(baseline - metric.score(labels, &model.predict_proba(&shuffled)?)?);
            }
            let mean = drops.iter().sum::<f64>() / repeats as f64;
            let var = drops.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / repeats as f64;
            Ok(PermutationScore {
                name: names[j].clone(),
                mean_drop: mean,
                std: var.sqrt(),
            })
        })
        .collect()
}
