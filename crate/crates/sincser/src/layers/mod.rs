//! Forward and hand-derived backward passes for the model building blocks.
//!
//! Layers own their parameters as [`Param`] pairs (value + gradient
//! accumulator). Backward passes are functional: they return gradient
//! bundles instead of mutating shared state, so per-example work can fan
//! out across threads and be reduced in input order afterwards.

pub mod attention;
pub mod conv;
pub mod dense;
pub mod embedding;
pub mod lstm;
pub mod norm;
pub mod sinc_conv;

pub use attention::SelfAttention;
pub use conv::{conv1d, conv1d_input_grad, conv1d_weight_grad, conv_frames};
pub use dense::{
    leaky_relu, leaky_relu_backward, max_pool, max_pool_backward, softmax, softmax_cross_entropy,
    Dense, LEAKY_SLOPE,
};
pub use embedding::Embedding;
pub use lstm::LstmCell;
pub use norm::{BatchNorm, Mode};
pub use sinc_conv::{sinc_conv, sinc_conv_backward, SincConvGrads};

use rand::Rng;

use crate::tensor::Tensor;

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Per-parameter learning-rate multiplier. Cutoff parameters live in
    /// Hz units and get a larger step than unit-scale weights.
    pub lr_scale: f64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            lr_scale: 1.0,
        }
    }

    pub fn with_lr_scale(value: Tensor, lr_scale: f64) -> Self {
        let mut p = Self::new(value);
        p.lr_scale = lr_scale;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product consistent by construction")
}
