//! Runtime network: parameters, forward and backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::rmsprop::RmsProp;
use super::spec::{ActShape, LayerSpec, NetworkSpec};
use crate::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, flatten, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, Exec, PoolIndices, Tensor,
};
use crate::{Error, Result};

/// Parameters of one learnable layer with their gradient accumulators and
/// optimizer caches.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub weights: Tensor,
    pub bias: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
    pub cache_weights: Tensor,
    pub cache_bias: Tensor,
}

impl LayerState {
    fn new(weights: Tensor, bias: Tensor) -> Self {
        LayerState {
            grad_weights: Tensor::zeros(weights.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            cache_weights: Tensor::zeros(weights.shape()),
            cache_bias: Tensor::zeros(bias.shape()),
            weights,
            bias,
        }
    }

    fn zero_grad(&mut self) {
        self.grad_weights.data_mut().fill(0.0);
        self.grad_bias.data_mut().fill(0.0);
    }

    fn accumulate(&mut self, gw: &Tensor, gb: &Tensor) {
        self.grad_weights
            .data_mut()
            .iter_mut()
            .zip(gw.data())
            .for_each(|(a, b)| *a += b);
        self.grad_bias
            .data_mut()
            .iter_mut()
            .zip(gb.data())
            .for_each(|(a, b)| *a += b);
    }
}

/// Activations retained by [`Network::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    pools: Vec<Option<PoolIndices>>,
}

impl ForwardCache {
    /// True when both passes took the same branch at every ReLU (sign of its
    /// input) and max-pool (argmax). The loss is smooth between two inputs
    /// with equal branches, barring an even number of crossings.
    pub fn same_branches(&self, other: &ForwardCache, spec: &NetworkSpec) -> bool {
        spec.layers
            .iter()
            .enumerate()
            .all(|(i, layer)| match layer {
                LayerSpec::Relu => self.inputs[i]
                    .data()
                    .iter()
                    .zip(other.inputs[i].data())
                    .all(|(a, b)| (*a > 0.0) == (*b > 0.0)),
                LayerSpec::MaxPool { .. } => self.pools[i] == other.pools[i],
                _ => true,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<ActShape>,
    states: Vec<Option<LayerState>>,
}

impl Network {
    /// Glorot-uniform weights, zero biases, drawn from a ChaCha8 stream seeded
    /// with `seed` in layer order.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(spec.layers.len());
        for (layer, input) in spec.layers.iter().zip(&shapes) {
            let state = match (*layer, *input) {
                (
                    LayerSpec::Conv {
                        filters, kernel, ..
                    },
                    ActShape::Spatial { c, .. },
                ) => {
                    let area = kernel * kernel;
                    let w = glorot(
                        &mut rng,
                        &[filters, c, kernel, kernel],
                        c * area,
                        filters * area,
                    )?;
                    Some(LayerState::new(w, Tensor::zeros(&[filters])))
                }
                (LayerSpec::Dense { units }, ActShape::Flat(d)) => {
                    let w = glorot(&mut rng, &[d, units], d, units)?;
                    Some(LayerState::new(w, Tensor::zeros(&[units])))
                }
                _ => None,
            };
            states.push(state);
        }
        Ok(Network {
            spec,
            shapes,
            states,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Activation shapes, input first.
    pub fn shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn layer_state(&self, layer: usize) -> Option<&LayerState> {
        self.states.get(layer).and_then(Option::as_ref)
    }

    pub fn layer_state_mut(&mut self, layer: usize) -> Option<&mut LayerState> {
        self.states.get_mut(layer).and_then(Option::as_mut)
    }

    /// `(layer index, state)` for every learnable layer.
    pub fn learnable(&self) -> impl Iterator<Item = (usize, &LayerState)> {
        self.states
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
    }

    pub fn learnable_mut(&mut self) -> impl Iterator<Item = (usize, &mut LayerState)> {
        self.states
            .iter_mut()
            .enumerate()
            .filter_map(|(i, s)| s.as_mut().map(|s| (i, s)))
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable()
            .map(|(_, s)| s.weights.len() + s.bias.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.learnable_mut().for_each(|(_, s)| s.zero_grad());
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.input_shape;
        match input.shape() {
            [n, ic, ih, iw] if *n > 0 && (*ic, *ih, *iw) == (c, h, w) => Ok(()),
            other => Err(Error::Shape(format!(
                "network expects [N, {c}, {h}, {w}] input, got {other:?}"
            ))),
        }
    }

    /// Logits `[N, num_classes]`.
    pub fn forward(&self, input: &Tensor, exec: Exec) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            x = self.layer_forward(i, &x, exec)?.0;
        }
        Ok(x)
    }

    pub fn forward_train(&self, input: &Tensor, exec: Exec) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut pools = Vec::with_capacity(self.spec.layers.len());
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            let (y, pool) = self.layer_forward(i, &x, exec)?;
            inputs.push(x);
            pools.push(pool);
            x = y;
        }
        Ok((x, ForwardCache { inputs, pools }))
    }

    fn layer_forward(
        &self,
        i: usize,
        x: &Tensor,
        exec: Exec,
    ) -> Result<(Tensor, Option<PoolIndices>)> {
        let layer = &self.spec.layers[i];
        Ok(match layer {
            LayerSpec::Conv { .. } => {
                let s = self.states[i].as_ref().expect("conv state");
                let geom = layer.geometry().unwrap();
                (conv2d_forward(x, &s.weights, &s.bias, &geom, exec)?, None)
            }
            LayerSpec::Dense { .. } => {
                let s = self.states[i].as_ref().expect("dense state");
                (dense_forward(x, &s.weights, &s.bias)?, None)
            }
            LayerSpec::Relu => (relu_forward(x), None),
            LayerSpec::MaxPool { .. } => {
                let (y, idx) = maxpool_forward(x, &layer.geometry().unwrap())?;
                (y, Some(idx))
            }
            LayerSpec::Flatten => (flatten(x), None),
        })
    }

    /// Back-propagates `grad_logits`, adding parameter gradients into the
    /// accumulators. Returns the gradient with respect to the input.
    pub fn backward(
        &mut self,
        cache: &ForwardCache,
        grad_logits: &Tensor,
        exec: Exec,
    ) -> Result<Tensor> {
        if cache.inputs.len() != self.spec.layers.len() {
            return Err(Error::Internal(
                "forward cache does not match the network".into(),
            ));
        }
        let mut g = grad_logits.clone();
        for i in (0..self.spec.layers.len()).rev() {
            let x = &cache.inputs[i];
            let layer = self.spec.layers[i];
            g = match layer {
                LayerSpec::Conv { .. } => {
                    let s = self.states[i].as_mut().expect("conv state");
                    let grads =
                        conv2d_backward(&g, x, &s.weights, &layer.geometry().unwrap(), exec)?;
                    s.accumulate(&grads.weights, &grads.bias);
                    grads.input
                }
                LayerSpec::Dense { .. } => {
                    let s = self.states[i].as_mut().expect("dense state");
                    let grads = dense_backward(&g, x, &s.weights)?;
                    s.accumulate(&grads.weights, &grads.bias);
                    grads.input
                }
                LayerSpec::Relu => relu_backward(&g, x)?,
                LayerSpec::MaxPool { .. } => {
                    let idx = cache.pools[i].as_ref().ok_or_else(|| {
                        Error::Internal(format!("layer {i}: missing pool indices"))
                    })?;
                    maxpool_backward(&g, idx, x.shape())?
                }
                LayerSpec::Flatten => g.reshape(x.shape().to_vec())?,
            };
        }
        Ok(g)
    }

    /// One optimizer step over every learnable layer.
    pub fn apply(&mut self, opt: &RmsProp) -> Result<()> {
        self.learnable_mut().try_for_each(|(_, s)| opt.step(s))
    }

    /// Named parameter and cache tensors, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.learnable() {
            out.push((format!("layer{i}.weights"), &s.weights));
            out.push((format!("layer{i}.bias"), &s.bias));
            out.push((format!("layer{i}.cache_weights"), &s.cache_weights));
            out.push((format!("layer{i}.cache_bias"), &s.cache_bias));
        }
        out
    }

    pub(crate) fn named_tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (layer, field) = name.strip_prefix("layer")?.split_once('.')?;
        let s = self.layer_state_mut(layer.parse().ok()?)?;
        match field {
            "weights" => Some(&mut s.weights),
            "bias" => Some(&mut s.bias),
            "cache_weights" => Some(&mut s.cache_weights),
            "cache_bias" => Some(&mut s.cache_bias),
            _ => None,
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Internal(e.to_string()))?;
    let count = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..count).map(|_| dist.sample(rng)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::{build_deep_convnet, Scale};

    fn tiny() -> NetworkSpec {
        "input=1x6x6;classes=3;layers=conv(2,3,1,1),relu,maxpool(2,2),flatten,dense(4),relu,dense(3)"
            .parse()
            .unwrap()
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::new(tiny(), 7).unwrap();
        assert_eq!(a, Network::new(tiny(), 7).unwrap());
        assert_ne!(a, Network::new(tiny(), 8).unwrap());
    }

    #[test]
    fn glorot_bounds_hold() {
        let net = Network::new(tiny(), 1).unwrap();
        let conv = net.layer_state(0).unwrap();
        let bound = (6.0f64 / (9.0 + 18.0)).sqrt();
        assert!(conv.weights.data().iter().all(|w| w.abs() <= bound));
        assert!(conv.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn logits_shape_and_input_check() {
        let net = Network::new(build_deep_convnet((1, 64, 64), Scale::Desk).unwrap(), 0).unwrap();
        let y = net
            .forward(&Tensor::full(&[2, 1, 64, 64], 0.5), Exec::Sequential)
            .unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(net
            .forward(&Tensor::zeros(&[2, 1, 32, 32]), Exec::Sequential)
            .is_err());
    }

    #[test]
    fn backward_accumulates() {
        let mut net = Network::new(tiny(), 3).unwrap();
        let x = Tensor::from_fn(&[2, 1, 6, 6], |i| {
            ((i[0] + i[2] * 3 + i[3]) % 5) as f64 / 4.0
        });
        let (y, cache) = net.forward_train(&x, Exec::Sequential).unwrap();
        let g = Tensor::full(y.shape(), 0.1);
        net.backward(&cache, &g, Exec::Sequential).unwrap();
        let once = net.layer_state(6).unwrap().grad_bias.clone();
        net.backward(&cache, &g, Exec::Sequential).unwrap();
        let twice = &net.layer_state(6).unwrap().grad_bias;
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
        net.zero_grad();
        assert!(net
            .layer_state(6)
            .unwrap()
            .grad_bias
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
