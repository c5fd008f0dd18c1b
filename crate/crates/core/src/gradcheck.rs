//! Finite-difference verification of back-propagated gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::network::{loss_and_gradient, ForwardCache, Network, NetworkSpec};
use crate::tensor::{Exec, Tensor};
use crate::{Error, Result};

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// from turning round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per parameter tensor (all of them when the tensor
    /// is smaller).
    pub samples_per_tensor: usize,
    pub batch: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            samples_per_tensor: 6,
            batch: 2,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub layer: usize,
    pub checked: usize,
    /// Coordinates passed over because the difference crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub spec: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tolerance)
    }

    /// Largest error per learnable layer, in layer order.
    pub fn per_layer(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for t in &self.tensors {
            match out.last_mut() {
                Some((l, e)) if *l == t.layer => *e = e.max(t.max_rel_err),
                _ => out.push((t.layer, t.max_rel_err)),
            }
        }
        out
    }
}

fn param(net: &mut Network, layer: usize, is_bias: bool, k: usize) -> &mut f64 {
    let s = net.layer_state_mut(layer).expect("learnable layer");
    let t = if is_bias { &mut s.bias } else { &mut s.weights };
    &mut t.data_mut()[k]
}

/// Steps tried before a coordinate is declared to sit on a kink.
const STEP_SHRINK: [f64; 3] = [1.0, 0.1, 0.01];

/// Central difference for one parameter coordinate, or `None` when every
/// step size straddles a ReLU or max-pool branch change.
fn probe(
    net: &mut Network,
    layer: usize,
    is_bias: bool,
    k: usize,
    x: &Tensor,
    labels: &[usize],
    step: f64,
) -> Result<Option<f64>> {
    let original = *param(net, layer, is_bias, k);
    let eval = |net: &mut Network, v: f64| -> Result<(f64, ForwardCache)> {
        *param(net, layer, is_bias, k) = v;
        let (logits, cache) = net.forward_train(x, Exec::Sequential)?;
        Ok((loss_and_gradient(&logits, labels, None)?.loss, cache))
    };
    let mut result = None;
    for scale in STEP_SHRINK {
        let h = step * scale;
        let (plus, cp) = eval(net, original + h)?;
        let (minus, cm) = eval(net, original - h)?;
        if cp.same_branches(&cm, net.spec()) {
            result = Some((plus - minus) / (2.0 * h));
            break;
        }
    }
    *param(net, layer, is_bias, k) = original;
    Ok(result)
}

/// Compares back-propagated parameter gradients of the mean cross-entropy
/// with central differences on a random batch. Biases are drawn from
/// `[0.05, 0.15]` rather than zero so no unit sits exactly on a ReLU kink,
/// and a difference only counts when both probes take the same branch at
/// every ReLU and max-pool.
pub fn check_network(spec: &NetworkSpec, config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.batch == 0 || config.samples_per_tensor == 0 || !(config.step > 0.0) {
        return Err(Error::Config(
            "gradcheck needs batch, samples and step above zero".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::new(spec.clone(), config.seed)?;
    for (_, s) in net.learnable_mut() {
        s.bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.random_range(0.05..0.15));
    }
    let (c, h, w) = spec.input_shape;
    let x = Tensor::from_fn(&[config.batch, c, h, w], |_| rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..config.batch)
        .map(|_| rng.random_range(0..spec.num_classes))
        .collect();

    let (logits, cache) = net.forward_train(&x, Exec::Sequential)?;
    let out = loss_and_gradient(&logits, &labels, None)?;
    net.zero_grad();
    net.backward(&cache, &out.grad_logits, Exec::Sequential)?;

    let layers: Vec<usize> = net.learnable().map(|(i, _)| i).collect();
    let mut tensors = Vec::new();
    for layer in layers {
        for is_bias in [false, true] {
            let state = net.layer_state(layer).unwrap();
            let analytic = if is_bias {
                state.grad_bias.clone()
            } else {
                state.grad_weights.clone()
            };
            let len = analytic.len();
            let wanted = config.samples_per_tensor.min(len);
            let mut candidates = sample(&mut rng, len, len.min(wanted * 4))
                .into_vec()
                .into_iter();
            let (mut checked, mut skipped, mut max_rel_err) = (0, 0, 0.0f64);
            while checked < wanted {
                let Some(k) = candidates.next() else { break };
                match probe(&mut net, layer, is_bias, k, &x, &labels, config.step)? {
                    Some(numeric) => {
                        max_rel_err = max_rel_err.max(relative_error(analytic.data()[k], numeric));
                        checked += 1;
                    }
                    None => skipped += 1,
                }
            }
            if checked == 0 {
                return Err(Error::Internal(format!(
                    "layer {layer}: every probed coordinate sits on a kink"
                )));
            }
            tensors.push(TensorCheck {
                name: format!("layer{layer}.{}", if is_bias { "bias" } else { "weights" }),
                layer,
                checked,
                skipped,
                max_rel_err,
            });
        }
    }
    Ok(GradCheckReport {
        spec: spec.to_string(),
        tolerance: config.tolerance,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn small_network_passes() {
        let spec: NetworkSpec = "input=1x8x8;classes=3;layers=conv(3,3,1,1),relu,maxpool(2,2),flatten,dense(5),relu,dense(3)"
            .parse()
            .unwrap();
        let r = check_network(&spec, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.tensors.len(), 6);
        assert!(r.passed(), "{r:?}");
    }
}
