use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, Tensor};
use crate::error::{CltsError, Result};
use crate::rng::Rng;

/// Anything that exposes an ordered, named list of parameter tensors.
///
/// Gradients and optimizer moments are `Vec<Tensor>` aligned with this order.
pub trait Parameterized {
    fn parameters(&self) -> Vec<(String, &Tensor)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_grads(&self) -> Vec<Tensor> {
        self.parameters()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect()
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs, pre-activations and outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CltsError::Contract("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(CltsError::dimension(
                    "consecutive layer widths",
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// `widths = [in, h1, ..., out]`; hidden layers share `hidden`.
    pub fn init(widths: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "need input and output width");
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.in_dim() {
            return Err(CltsError::dimension("network input", self.in_dim(), x.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&h);
            let y = layer.activation.apply(&z);
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        Ok(Trace {
            inputs,
            pre,
            output: h,
        })
    }

    /// Backpropagates a gradient w.r.t. the network output.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut [Tensor]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let delta =
            self.layers[last]
                .activation
                .backprop(&trace.pre[last], &trace.output, upstream);
        self.backward_from_delta(trace, delta, grads)
    }

    /// Backpropagates a gradient w.r.t. the final pre-activation (logits).
    /// Used by losses fused with their output nonlinearity.
    pub fn backward_from_delta(
        &self,
        trace: &Trace,
        mut delta: Vec<f64>,
        grads: &mut [Tensor],
    ) -> Vec<f64> {
        debug_assert_eq!(grads.len(), 2 * self.layers.len());
        let mut i = self.layers.len() - 1;
        loop {
            let (gw, gb) = grads[2 * i..2 * i + 2].split_at_mut(1);
            let dx = self.layers[i].accumulate_from_delta(
                &trace.inputs[i],
                &delta,
                &mut gw[0],
                &mut gb[0],
            );
            if i == 0 {
                return dx;
            }
            i -= 1;
            delta = self.layers[i]
                .activation
                .backprop(&trace.pre[i], &trace.inputs[i + 1], &dx);
        }
    }

    pub fn named_parameters<'a>(&'a self, prefix: &str) -> Vec<(String, &'a Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}{i}.weights"), &l.weights),
                    (format!("{prefix}{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.named_parameters("layer")
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }
}
