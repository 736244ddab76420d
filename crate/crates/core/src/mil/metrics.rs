use serde::{Deserialize, Serialize};

use super::DECISION_THRESHOLD;
use crate::error::{Error, Result};
use crate::label::Label;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{a} predictions for {b} labels"
        )));
    }
    Ok(())
}

/// Fraction of (positive, negative) pairs ranked correctly, ties worth ½.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_positive())
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_positive())
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    // Counted in half-units so the sum stays an exact integer.
    let mut halves: u64 = 0;
    for &p in &pos {
        for &n in &neg {
            halves += match p.partial_cmp(&n) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(halves as f64 / (2 * pos.len() * neg.len()) as f64)
}

pub fn accuracy(preds: &[Label], labels: &[Label]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean of the two per-class recalls.
pub fn balanced_accuracy(preds: &[Label], labels: &[Label]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let recall = |class: Label| -> Option<f64> {
        let total = labels.iter().filter(|&&l| l == class).count();
        let hit = preds
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| l == class && p == class)
            .count();
        (total > 0).then(|| hit as f64 / total as f64)
    };
    match (recall(Label::Positive), recall(Label::Negative)) {
        (Some(tpr), Some(tnr)) => Ok(0.5 * (tpr + tnr)),
        _ => Err(Error::SingleClass),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BagMetrics {
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub auc: f64,
}

impl BagMetrics {
    pub fn from_scores(scores: &[f64], labels: &[Label]) -> Result<Self> {
        let preds: Vec<Label> = scores
            .iter()
            .map(|&s| {
                if s >= DECISION_THRESHOLD {
                    Label::Positive
                } else {
                    Label::Negative
                }
            })
            .collect();
        Ok(Self {
            balanced_accuracy: balanced_accuracy(&preds, labels)?,
            accuracy: accuracy(&preds, labels)?,
            auc: auc(scores, labels)?,
        })
    }
}

/// Repeated runs with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_runs: usize,
    pub runs: Vec<BagMetrics>,
    pub mean: BagMetrics,
    pub std: BagMetrics,
}

impl MetricsReport {
    pub fn from_runs(runs: Vec<BagMetrics>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::EmptyInput("metric runs"));
        }
        let stat = |f: fn(&BagMetrics) -> f64| -> (f64, f64) {
            let n = runs.len() as f64;
            let mean = runs.iter().map(f).sum::<f64>() / n;
            let var = runs.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (b, bs) = stat(|r| r.balanced_accuracy);
        let (a, as_) = stat(|r| r.accuracy);
        let (u, us) = stat(|r| r.auc);
        Ok(Self {
            n_runs: runs.len(),
            runs,
            mean: BagMetrics {
                balanced_accuracy: b,
                accuracy: a,
                auc: u,
            },
            std: BagMetrics {
                balanced_accuracy: bs,
                accuracy: as_,
                auc: us,
            },
        })
    }
}
