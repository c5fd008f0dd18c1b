//! Confusion matrix, per-class scores and one-vs-rest ROC.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Mean unweighted cross-entropy over the evaluated split.
    pub loss: f64,
    pub per_class: Vec<ClassMetrics>,
    pub roc: Vec<RocCurve>,
    pub macro_auc: Option<f64>,
    pub curves: Vec<EpochMetrics>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest ROC for one class. Thresholds sweep the distinct scores from
/// high to low; tied scores enter together.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> (Vec<(f64, f64)>, Option<f64>) {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let rate = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((rate(fp, neg), rate(tp, pos)));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    let auc = (pos > 0 && neg > 0).then(|| {
        points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    });
    (points, auc)
}

/// Builds a report from class probabilities `[N, n]` and true labels.
/// `loss` is the mean cross-entropy the caller computed alongside.
pub fn report_from_scores(probs: &Tensor, labels: &[usize], loss: f64) -> Result<EvalReport> {
    probs.expect_rank(2, "scores")?;
    let (rows, n) = (probs.shape()[0], probs.shape()[1]);
    if rows != labels.len() {
        return Err(Error::Shape(format!(
            "{rows} score rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {n} classes"
        )));
    }
    let mut confusion = vec![vec![0usize; n]; n];
    for (row, &y) in probs.data().chunks_exact(n).zip(labels) {
        confusion[y][argmax(row)] += 1;
    }
    let trace: usize = (0..n).map(|k| confusion[k][k]).sum();
    let accuracy = trace as f64 / rows as f64;

    let per_class = (0..n)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let predicted: usize = (0..n).map(|r| confusion[r][k]).sum();
            let actual: usize = confusion[k].iter().sum();
            let ratio = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();

    let roc: Vec<RocCurve> = (0..n)
        .map(|k| {
            let scores: Vec<f64> = probs.data().chunks_exact(n).map(|r| r[k]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            let (points, auc) = roc_curve(&scores, &positive);
            RocCurve {
                class: k,
                points,
                auc,
            }
        })
        .collect();
    let aucs: Vec<f64> = roc.iter().filter_map(|c| c.auc).collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);

    Ok(EvalReport {
        confusion,
        accuracy,
        loss,
        per_class,
        roc,
        macro_auc,
        curves: Vec::new(),
    })
}
