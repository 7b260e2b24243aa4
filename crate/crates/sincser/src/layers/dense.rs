//! Dense layer, activations, pooling, and softmax cross-entropy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_uniform, Param};
use crate::tensor::{matvec, matvec_t, outer_acc, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Affine map `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
}

/// Weight gradients for one [`Dense`] application.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dw: Tensor,
    pub db: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: Param::new(init_uniform(&[output, input], input, rng)),
            b: Param::new(Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(&self.w.value, x);
        for (yi, bi) in y.iter_mut().zip(self.b.value.data()) {
            *yi += bi;
        }
        y
    }

    /// Returns `(grads, dx)` for one example.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> (DenseGrads, Vec<f64>) {
        let mut dw = Tensor::zeros(self.w.value.shape());
        outer_acc(&mut dw, upstream, x);
        let dx = matvec_t(&self.w.value, upstream);
        (
            DenseGrads {
                dw,
                db: upstream.to_vec(),
            },
            dx,
        )
    }

    pub fn accumulate(&mut self, grads: &DenseGrads) {
        self.w.grad.add_assign(&grads.dw);
        for (g, d) in self.b.grad.data_mut().iter_mut().zip(&grads.db) {
            *g += d;
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.value.len() + self.b.value.len()
    }
}

/// LeakyReLU with slope [`LEAKY_SLOPE`] on the negative side.
pub fn leaky_relu(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })
        .collect()
}

/// Backward of [`leaky_relu`] given the forward *input*.
pub fn leaky_relu_backward(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &u)| if v >= 0.0 { u } else { LEAKY_SLOPE * u })
        .collect()
}

/// Non-overlapping max pooling along the last axis of a `(channels, time)`
/// plane. Returns pooled values and the argmax offsets used by the
/// backward pass. Trailing samples that do not fill a window are dropped.
pub fn max_pool(plane: &[f64], channels: usize, time: usize, width: usize) -> (Vec<f64>, Vec<usize>) {
    let out_t = time / width;
    let mut out = vec![0.0; channels * out_t];
    let mut arg = vec![0usize; channels * out_t];
    for c in 0..channels {
        for t in 0..out_t {
            let base = c * time + t * width;
            let mut best = plane[base];
            let mut best_i = base;
            for k in 1..width {
                let v = plane[base + k];
                if v > best {
                    best = v;
                    best_i = base + k;
                }
            }
            out[c * out_t + t] = best;
            arg[c * out_t + t] = best_i;
        }
    }
    (out, arg)
}

/// Scatters pooled gradients back to the argmax positions.
pub fn max_pool_backward(
    upstream: &[f64],
    arg: &[usize],
    channels: usize,
    time: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; channels * time];
    for (u, &i) in upstream.iter().zip(arg) {
        dx[i] += u;
    }
    dx
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy of the softmax over `logits` against `label`, with its
/// gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let log_sum = m + sum.ln();
    let loss = log_sum - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_sum).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
