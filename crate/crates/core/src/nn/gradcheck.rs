//! Central finite-difference gradient checking.

use serde::Serialize;

use super::{Parameterized, Tensor};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so exactly-zero gradients
/// (dead relu units) compare on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Name of the block carrying the largest error.
    pub fn worst_block(&self) -> Option<&str> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
            .map(|b| b.name.as_str())
    }

    /// Blocks whose error exceeds the tolerance.
    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_relative_error < self.tolerance))
            .map(|b| b.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `loss_and_grad` against central
/// differences of its loss, for every scalar parameter of `model`.
pub fn grad_check<M, F>(model: &M, loss_and_grad: F, step: f64, tolerance: f64) -> GradCheckReport
where
    M: Parameterized + Clone,
    F: Fn(&M) -> (f64, Vec<Tensor>),
{
    assert!(step > 0.0 && tolerance > 0.0);
    let (_, analytic) = loss_and_grad(model);
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    assert_eq!(analytic.len(), names.len(), "one gradient per parameter block");

    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(names.len());
    for (b, name) in names.into_iter().enumerate() {
        let mut block = BlockReport {
            name,
            max_relative_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..analytic[b].len() {
            let original = probe.parameters_mut()[b].data()[i];
            probe.parameters_mut()[b].data_mut()[i] = original + step;
            let plus = loss_and_grad(&probe).0;
            probe.parameters_mut()[b].data_mut()[i] = original - step;
            let minus = loss_and_grad(&probe).0;
            probe.parameters_mut()[b].data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[b].data()[i];
            let err = relative_error(a, numeric);
            if !(err <= block.max_relative_error) {
                block.max_relative_error = err;
                block.worst_index = i;
                block.analytic = a;
                block.numeric = numeric;
            }
        }
        blocks.push(block);
    }
    let max_relative_error = blocks
        .iter()
        .map(|b| b.max_relative_error)
        .fold(0.0, f64::max);
    GradCheckReport {
        passed: max_relative_error < tolerance,
        blocks,
        max_relative_error,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::rng::rng_from;

    fn squared_error(net: &Mlp, x: &[f64], target: &[f64]) -> (f64, Vec<Tensor>) {
        let trace = net.forward_trace(x).unwrap();
        let diff: Vec<f64> = trace.output.iter().zip(target).map(|(y, t)| y - t).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        let mut grads = net.zero_grads();
        net.backward(&trace, &diff, &mut grads);
        (loss, grads)
    }

    #[test]
    fn linear_network_squared_error() {
        let mut rng = rng_from(11);
        let net = Mlp::init(&[4, 3], Activation::Identity, Activation::Identity, &mut rng);
        let x = [0.3, -0.7, 1.2, 0.05];
        let t = [0.5, -0.5, 0.1];
        let report = grad_check(&net, |m| squared_error(m, &x, &t), DEFAULT_STEP, 1e-6);
        assert!(report.passed, "max rel error {}", report.max_relative_error);
    }

    #[test]
    fn two_layer_tanh_network() {
        let mut rng = rng_from(12);
        let net = Mlp::init(&[5, 4, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let x = [0.3, -0.7, 1.2, 0.05, -0.4];
        let t = [0.5, -0.5, 0.1];
        let report = grad_check(&net, |m| squared_error(m, &x, &t), DEFAULT_STEP, 1e-4);
        assert!(report.passed, "max rel error {}", report.max_relative_error);
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let mut rng = rng_from(13);
        let net = Mlp::init(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let x = [0.2, 0.1, -0.3];
        let t = [1.0, 0.0];
        let report = grad_check(
            &net,
            |m| {
                let (l, mut g) = squared_error(m, &x, &t);
                g[2].data_mut()[0] += 0.1;
                (l, g)
            },
            DEFAULT_STEP,
            1e-4,
        );
        assert!(!report.passed);
        assert_eq!(report.failing_blocks(), vec!["layer1.weights"]);
        assert_eq!(report.worst_block(), Some("layer1.weights"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(relative_error(0.0, 1e-9) <= 1e-3);
    }
}
