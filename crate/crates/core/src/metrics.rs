//! Accuracy and (macro) F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn check_lengths(predictions: &[usize], gold: &[usize]) -> Result<()> {
    if predictions.len() != gold.len() || gold.is_empty() {
        return Err(Error::Config(format!(
            "need equal, non-empty prediction and gold sequences ({} vs {})",
            predictions.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    check_lengths(predictions, gold)?;
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision/recall/F1 for each of `classes` classes; 0/0 is 0.
pub fn per_class_scores(predictions: &[usize], gold: &[usize], classes: usize) -> Result<Vec<ClassScores>> {
    check_lengths(predictions, gold)?;
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&c| c >= classes) {
        return Err(Error::Index {
            what: "class",
            index: bad,
            bound: classes,
        });
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        predicted[p] += 1;
        support[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: support[c],
            }
        })
        .collect())
}

/// Unweighted mean F1 over all `classes`, zero-support classes included.
pub fn macro_f1(predictions: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    let scores = per_class_scores(predictions, gold, classes)?;
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / classes as f64)
}

/// Mean F1 over classes that occur in `gold` only.
pub fn present_class_macro_f1(scores: &[ClassScores]) -> f64 {
    let present: Vec<f64> = scores.iter().filter(|s| s.support > 0).map(|s| s.f1).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}
