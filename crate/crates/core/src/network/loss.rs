//! Softmax and categorical cross-entropy.

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_rows(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    t.expect_rank(2, what)?;
    Ok((t.shape()[0], t.shape()[1]))
}

/// Row-wise softmax of `[N, n]` logits, stabilized by subtracting the row max.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, n) = check_rows(logits, "logits")?;
    if n < 2 {
        return Err(Error::Shape(format!(
            "softmax needs at least 2 classes, got {n}"
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Data("softmax input contains NaN or infinity".into()));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// `[N, n]` one-hot matrix for class indices.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len().max(1), num_classes]);
    if labels.is_empty() {
        return Err(Error::Label("empty label batch".into()));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Label(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        t.data_mut()[i * num_classes + l] = 1.0;
    }
    Ok(t)
}

/// Class index of each one-hot row.
fn targets(probs: &Tensor, onehot: &Tensor) -> Result<Vec<usize>> {
    let (rows, n) = check_rows(onehot, "targets")?;
    if probs.shape() != onehot.shape() {
        return Err(Error::Shape(format!(
            "probabilities {:?} and targets {:?} differ in shape",
            probs.shape(),
            onehot.shape()
        )));
    }
    (0..rows)
        .map(|r| {
            let row = &onehot.data()[r * n..(r + 1) * n];
            let ones: Vec<usize> = (0..n).filter(|&j| row[j] == 1.0).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            match ones[..] {
                [k] if zeros == n - 1 => Ok(k),
                _ => Err(Error::Label(format!(
                    "target row {r} is not one-hot: {row:?}"
                ))),
            }
        })
        .collect()
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Shape(format!(
                "{} class weights for {n} classes",
                w.len()
            )));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config(format!(
                "class weights must be finite and non-negative: {w:?}"
            )));
        }
    }
    Ok(())
}

/// Batch mean of `-Σ_k t_k log p_k`.
pub fn cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    weighted_cross_entropy(probs, onehot, None)
}

/// Cross-entropy whose per-sample terms are scaled by the weight of the
/// sample's class. `None` is the unweighted loss.
pub fn weighted_cross_entropy(
    probs: &Tensor,
    onehot: &Tensor,
    weights: Option<&[f64]>,
) -> Result<f64> {
    let ys = targets(probs, onehot)?;
    let n = onehot.shape()[1];
    check_weights(weights, n)?;
    let mut total = 0.0;
    for (r, &y) in ys.iter().enumerate() {
        let term = -probs.data()[r * n + y].max(PROB_FLOOR).ln();
        total += match weights {
            Some(w) => w[y] * term,
            None => term,
        };
    }
    Ok(total / ys.len() as f64)
}

/// Gradient of the batch-mean loss with respect to the logits: `(p - t) / N`.
pub fn softmax_ce_gradient(probs: &Tensor, onehot: &Tensor) -> Result<Tensor> {
    weighted_softmax_ce_gradient(probs, onehot, None)
}

pub fn weighted_softmax_ce_gradient(
    probs: &Tensor,
    onehot: &Tensor,
    weights: Option<&[f64]>,
) -> Result<Tensor> {
    let ys = targets(probs, onehot)?;
    let n = onehot.shape()[1];
    check_weights(weights, n)?;
    let batch = ys.len() as f64;
    let mut g = probs.clone();
    for (r, (row, t)) in g
        .data_mut()
        .chunks_exact_mut(n)
        .zip(onehot.data().chunks_exact(n))
        .enumerate()
    {
        for (v, &tv) in row.iter_mut().zip(t) {
            *v = match weights {
                Some(w) => (*v - tv) * w[ys[r]] / batch,
                None => (*v - tv) / batch,
            };
        }
    }
    Ok(g)
}

/// Probabilities, loss and logit gradient for one batch.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub probs: Tensor,
    pub loss: f64,
    pub grad_logits: Tensor,
}

pub fn loss_and_gradient(
    logits: &Tensor,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<LossOutput> {
    let probs = softmax(logits)?;
    let onehot = one_hot(labels, logits.shape()[1])?;
    if onehot.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "{} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let loss = weighted_cross_entropy(&probs, &onehot, weights)?;
    let grad_logits = weighted_softmax_ce_gradient(&probs, &onehot, weights)?;
    Ok(LossOutput {
        probs,
        loss,
        grad_logits,
    })
}
