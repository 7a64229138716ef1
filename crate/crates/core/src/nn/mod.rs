//! Dense-network substrate: tensors, affine layers, an adaptive-moment
//! optimizer and a finite-difference gradient checker.

mod gradcheck;
mod layer;
mod mlp;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, BlockReport, GradCheckReport, DEFAULT_STEP, RELATIVE_FLOOR};
pub use layer::{sigmoid, softmax, Activation, DenseLayer, LayerGrads};
pub use mlp::{Mlp, Parameterized, Trace};
pub use optim::{Adam, BETA1, BETA2, DEFAULT_LEARNING_RATE, EPSILON};
pub use tensor::Tensor;

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
