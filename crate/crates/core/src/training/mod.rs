//! Training loop, class weighting and evaluation.

mod curves;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use curves::{
    export_curves, parse_curves, render_curves, render_roc, CURVES_FILE, CURVES_HEADER, ROC_FILE,
    ROC_HEADER,
};
pub use metrics::{
    argmax, report_from_scores, roc_curve, ClassMetrics, EpochMetrics, EvalReport, RocCurve,
};

use crate::kv::KvConfig;
use crate::network::{loss_and_gradient, Network, NetworkSpec, RmsProp};
use crate::preprocess::{DatasetSplits, SliceDataset};
use crate::tensor::{Exec, Tensor};
use crate::{ClassLabel, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClassWeighting {
    #[default]
    None,
    InverseFrequency,
}

impl std::fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassWeighting::None => "none",
            ClassWeighting::InverseFrequency => "inverse_frequency",
        })
    }
}

impl std::str::FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(ClassWeighting::None),
            "inverse_frequency" => Ok(ClassWeighting::InverseFrequency),
            other => Err(Error::Config(format!("unknown class weighting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    /// Run every layer sequentially. Reductions are ordered in both modes, so
    /// this only trades speed for a simpler execution trace.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    /// 70 epochs, batches of 100, learning rate 1e-4.
    fn default() -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 100,
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
            class_weighting: ClassWeighting::None,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.lr,
            rho: self.rho,
            epsilon: self.eps,
        }
    }

    pub fn exec(&self) -> Exec {
        if self.deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    /// Reads `epochs`, `batch_size`, `lr`, `rho`, `eps`, `class_weighting`,
    /// `seed` and `deterministic`.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        if let Some(v) = kv.parse_value("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.parse_value("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.parse_value("lr")? {
            self.lr = v;
        }
        if let Some(v) = kv.parse_value("rho")? {
            self.rho = v;
        }
        if let Some(v) = kv.parse_value("eps")? {
            self.eps = v;
        }
        if let Some(v) = kv.parse_value("class_weighting")? {
            self.class_weighting = v;
        }
        if let Some(v) = kv.parse_value("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.parse_value("deterministic")? {
            self.deterministic = v;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("rho", self.rho);
        kv.set("eps", self.eps);
        kv.set("class_weighting", self.class_weighting);
        kv.set("seed", self.seed);
        kv.set("deterministic", self.deterministic);
        kv
    }
}

/// `none` gives all ones; `inverse_frequency` gives `total / (n * count_i)`,
/// which is all ones on balanced data.
pub fn class_weights(counts: &[usize], mode: ClassWeighting) -> Result<Vec<f64>> {
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Stratification(format!("class {k} has no samples")));
    }
    Ok(match mode {
        ClassWeighting::None => vec![1.0; counts.len()],
        ClassWeighting::InverseFrequency => {
            let total: usize = counts.iter().sum();
            let n = counts.len() as f64;
            counts
                .iter()
                .map(|&c| total as f64 / (n * c as f64))
                .collect()
        }
    })
}

/// Stacks the records at `idx` into `[B, 1, H, W]` plus class indices.
pub fn make_batch(data: &SliceDataset, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let first = data
        .records()
        .get(
            *idx.first()
                .ok_or_else(|| Error::Data("empty batch".into()))?,
        )
        .ok_or_else(|| Error::Internal("batch index out of range".into()))?;
    let (h, w) = (first.pixels.shape()[0], first.pixels.shape()[1]);
    let mut pixels = Vec::with_capacity(idx.len() * h * w);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let r = &data.records()[i];
        if r.pixels.shape() != [h, w] {
            return Err(Error::Shape(format!(
                "slice {}:{} has shape {:?}, batch expects [{h}, {w}]",
                r.subject_id,
                r.slice_index,
                r.pixels.shape()
            )));
        }
        pixels.extend_from_slice(r.pixels.data());
        labels.push(r.label.index());
    }
    Ok((Tensor::new(vec![idx.len(), 1, h, w], pixels)?, labels))
}

const EVAL_CHUNK: usize = 256;

/// Scores every record of `split` and returns the report (without curves).
pub fn evaluate(net: &Network, split: &SliceDataset, exec: Exec) -> Result<EvalReport> {
    let (probs, labels, loss) = score(net, split, exec)?;
    report_from_scores(&probs, &labels, loss)
}

fn score(net: &Network, split: &SliceDataset, exec: Exec) -> Result<(Tensor, Vec<usize>, f64)> {
    if split.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let n = net.spec().num_classes;
    let mut probs = Vec::with_capacity(split.len() * n);
    let mut labels = Vec::with_capacity(split.len());
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..split.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, y) = make_batch(split, chunk)?;
        let out = loss_and_gradient(&net.forward(&x, exec)?, &y, None)?;
        loss_sum += out.loss * chunk.len() as f64;
        probs.extend_from_slice(out.probs.data());
        labels.extend(y);
    }
    Ok((
        Tensor::new(vec![split.len(), n], probs)?,
        labels,
        loss_sum / split.len() as f64,
    ))
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the highest validation accuracy
    /// (earliest on ties).
    pub best: Network,
    pub best_epoch: usize,
    pub last: Network,
    /// Optimizer steps taken.
    pub steps: u64,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Test-split report of `best`, with per-epoch curves attached.
    pub report: EvalReport,
}

pub fn train(
    spec: &NetworkSpec,
    splits: &DatasetSplits,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(spec, splits, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    spec: &NetworkSpec,
    splits: &DatasetSplits,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    for (name, part) in [
        ("train", &splits.train),
        ("validation", &splits.val),
        ("test", &splits.test),
    ] {
        if part.is_empty() {
            return Err(Error::Data(format!("{name} split is empty")));
        }
        if let Some(shape) = part.input_shape() {
            if shape != spec.input_shape {
                return Err(Error::Shape(format!(
                    "{name} slices are {shape:?}, network expects {:?}",
                    spec.input_shape
                )));
            }
        }
    }
    let counts = splits.train.class_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Stratification(format!(
            "training split has no {} samples",
            ClassLabel::ALL[k]
        )));
    }
    let weights = match config.class_weighting {
        ClassWeighting::None => None,
        mode => Some(class_weights(&counts, mode)?),
    };
    let exec = config.exec();
    let opt = config.optimizer();
    let mut net = Network::new(spec.clone(), config.seed)?;
    let initial_loss = score(&net, &splits.train, exec)?.2;
    log::info!("initial training loss {initial_loss:.6}");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut curves = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut steps = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| Error::Divergence {
                epoch,
                batch: b + 1,
                detail,
            };
            let (x, y) = make_batch(&splits.train, idx)?;
            let (logits, cache) = net.forward_train(&x, exec)?;
            if !logits.is_finite() {
                return Err(diverged("non-finite logits".into()));
            }
            let out = loss_and_gradient(&logits, &y, weights.as_deref())?;
            if !out.loss.is_finite() {
                return Err(diverged(format!("loss is {}", out.loss)));
            }
            net.zero_grad();
            net.backward(&cache, &out.grad_logits, exec)?;
            net.apply(&opt).map_err(|e| match e {
                Error::NonFinite(m) => diverged(m),
                other => other,
            })?;
            steps += 1;
            loss_sum += out.loss * idx.len() as f64;
            correct += out
                .probs
                .data()
                .chunks_exact(spec.num_classes)
                .zip(&y)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
        }
        let val = evaluate(&net, &splits.val, exec)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            val_loss: val.loss,
            train_acc: correct as f64 / splits.train.len() as f64,
            val_acc: val.accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
            m.train_loss,
            m.train_acc,
            m.val_loss,
            m.val_acc
        );
        on_epoch(&m);
        curves.push(m);
        if best.as_ref().is_none_or(|(acc, _, _)| m.val_acc > *acc) {
            best = Some((m.val_acc, epoch, net.clone()));
        }
    }

    let (_, best_epoch, best) = best.expect("at least one epoch");
    let mut report = evaluate(&best, &splits.test, exec)?;
    report.curves = curves;
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: net,
        steps,
        initial_loss,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_formula() {
        assert_eq!(
            class_weights(&[10, 10, 10], ClassWeighting::InverseFrequency).unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(
            class_weights(&[3, 5, 9], ClassWeighting::None).unwrap(),
            vec![1.0; 3]
        );
        let w = class_weights(&[1, 3], ClassWeighting::InverseFrequency).unwrap();
        assert_eq!(w, vec![2.0, 4.0 / 6.0]);
        assert!(class_weights(&[1, 0, 2], ClassWeighting::None).is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let mut c = TrainConfig {
            epochs: 3,
            lr: 0.002,
            deterministic: true,
            ..Default::default()
        };
        c.class_weighting = ClassWeighting::InverseFrequency;
        let mut back = TrainConfig::default();
        back.apply_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        let bad = KvConfig::parse("epochs = 0").unwrap();
        assert!(TrainConfig::default().apply_kv(&bad).is_err());
    }
}
