use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{CltsError, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn apply(self, pre: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => pre.to_vec(),
            Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
            Activation::Tanh => pre.iter().map(|&z| z.tanh()).collect(),
            Activation::Sigmoid => pre.iter().map(|&z| sigmoid(z)).collect(),
            Activation::Softmax => softmax(pre),
        }
    }

    /// Maps the gradient w.r.t. the activation output onto the pre-activation.
    pub fn backprop(self, pre: &[f64], out: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            Activation::Identity => upstream.to_vec(),
            Activation::Relu => pre
                .iter()
                .zip(upstream)
                .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Tanh => out
                .iter()
                .zip(upstream)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect(),
            Activation::Sigmoid => out
                .iter()
                .zip(upstream)
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect(),
            Activation::Softmax => {
                let dot: f64 = out.iter().zip(upstream).map(|(y, g)| y * g).sum();
                out.iter()
                    .zip(upstream)
                    .map(|(&y, &g)| y * (g - dot))
                    .collect()
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Fully connected layer `activation(W·x + b)` with `W: [out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let &[out, _] = weights.shape() else {
            return Err(CltsError::Contract(format!(
                "layer weights must be 2-D, got shape {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out] {
            return Err(CltsError::dimension("layer bias", out, bias.len()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        DenseLayer {
            weights: Tensor::new(vec![output, input], data).expect("shape matches data"),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(CltsError::dimension(
                format!(
                    "dense layer {}→{} ({:?}) input",
                    self.in_dim(),
                    self.out_dim(),
                    self.activation
                ),
                self.in_dim(),
                input.len(),
            ));
        }
        Ok(())
    }

    pub(crate) fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        let n_in = self.in_dim();
        self.weights
            .data()
            .chunks_exact(n_in)
            .zip(self.bias.data())
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.activation.apply(&self.pre_activation(input)))
    }

    /// Analytic gradients given the loss gradient w.r.t. this layer's output.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(LayerGrads, Vec<f64>)> {
        self.check_input(input)?;
        if upstream.len() != self.out_dim() {
            return Err(CltsError::dimension(
                "dense layer upstream gradient",
                self.out_dim(),
                upstream.len(),
            ));
        }
        let pre = self.pre_activation(input);
        let out = self.activation.apply(&pre);
        let delta = self.activation.backprop(&pre, &out, upstream);
        let mut grads = LayerGrads {
            weights: Tensor::zeros(self.weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        };
        let dx = self.accumulate_from_delta(input, &delta, &mut grads.weights, &mut grads.bias);
        Ok((grads, dx))
    }

    /// Accumulates parameter gradients for a pre-activation gradient `delta`
    /// and returns the gradient w.r.t. the input.
    pub(crate) fn accumulate_from_delta(
        &self,
        input: &[f64],
        delta: &[f64],
        grad_weights: &mut Tensor,
        grad_bias: &mut Tensor,
    ) -> Vec<f64> {
        let n_in = self.in_dim();
        let mut dx = vec![0.0; n_in];
        for (((row, grow), db), &d) in self
            .weights
            .data()
            .chunks_exact(n_in)
            .zip(grad_weights.data_mut().chunks_exact_mut(n_in))
            .zip(grad_bias.data_mut())
            .zip(delta)
        {
            if d == 0.0 {
                continue;
            }
            *db += d;
            for ((w, gw), (x, dxi)) in row.iter().zip(grow).zip(input.iter().zip(dx.iter_mut())) {
                *gw += d * x;
                *dxi += d * w;
            }
        }
        dx
    }
}
