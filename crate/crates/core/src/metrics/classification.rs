use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class and macro precision/recall/F1 (0/0 taken as 0).
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> MetricsResult<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::Length(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty("no labels"));
    }
    let k = predictions
        .iter()
        .chain(labels)
        .copied()
        .max()
        .map_or(0, |m| m + 1)
        .max(num_classes);
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let support: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(ClassificationMetrics {
        accuracy: ratio(trace, labels.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion,
    })
}

/// Macro one-vs-rest AUC from the Mann–Whitney rank statistic, ties at
/// average rank. Classes with no positive or no negative example are
/// skipped; `None` when every class is skipped.
pub fn auc_roc(probs: &[Vec<f64>], labels: &[usize]) -> MetricsResult<Option<f64>> {
    if probs.len() != labels.len() {
        return Err(MetricsError::Length(probs.len(), labels.len()));
    }
    let Some(classes) = probs.first().map(Vec::len) else {
        return Err(MetricsError::Empty("no scores"));
    };
    if probs.iter().any(|r| r.len() != classes) {
        return Err(MetricsError::InvalidArgument("rows differ in class count".into()));
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut ranks = vec![0.0f64; n];
    let mut aucs = Vec::new();
    for c in 0..classes {
        let pos = labels.iter().filter(|&&l| l == c).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        order.sort_by(|&a, &b| probs[a][c].total_cmp(&probs[b][c]));
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && probs[order[j + 1]][c] == probs[order[i]][c] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        let pos_rank: f64 = (0..n).filter(|&i| labels[i] == c).map(|i| ranks[i]).sum();
        let u = pos_rank - (pos * (pos + 1)) as f64 / 2.0;
        aucs.push(u / (pos as f64 * neg as f64));
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}
