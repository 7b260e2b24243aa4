//! Convolution with kernels materialized from sinc cutoff parameters.
//!
//! Forward is exactly [`conv1d`] over the materialized bank. Backward
//! chains the convolution's weight gradient through the analytic kernel
//! partials down to the two raw parameters of each filter, so a bank of
//! `F` filters exposes `2F` learnable scalars.

use crate::dsp::{cutoff_jacobian, kernel_grads_from_cutoffs, CutoffLimits, SincBank};
use crate::error::Result;
use crate::layers::conv::{conv1d, conv1d_input_grad, conv1d_weight_grad};
use crate::tensor::Tensor;

/// Gradients of a loss with respect to a sinc layer's inputs and
/// parameters, one entry per filter.
#[derive(Debug, Clone)]
pub struct SincConvGrads {
    /// With respect to the raw theta1 parameters.
    pub d_theta1: Vec<f64>,
    /// With respect to the raw theta2 parameters.
    pub d_theta2: Vec<f64>,
    /// With respect to the constrained low cutoffs, in 1/Hz units.
    pub d_f1_hz: Vec<f64>,
    /// With respect to the constrained high cutoffs, in 1/Hz units.
    pub d_f2_hz: Vec<f64>,
    /// With respect to the input waveforms.
    pub d_input: Tensor,
}

/// Materializes the bank and convolves; numerically identical to calling
/// [`conv1d`] with the materialized kernels.
pub fn sinc_conv(x: &Tensor, bank: &SincBank, stride: usize) -> Result<Tensor> {
    let weights = materialized_weights(bank)?;
    conv1d(x, &weights, stride)
}

/// The bank's kernels stacked into a `(num_filters, length)` tensor.
pub fn materialized_weights(bank: &SincBank) -> Result<Tensor> {
    let kernels = bank.materialize()?;
    let length = bank.kernel_length();
    let mut data = Vec::with_capacity(kernels.len() * length);
    for k in &kernels {
        data.extend_from_slice(&k.coeffs);
    }
    Tensor::new(vec![kernels.len(), length], data)
}

/// Full backward pass: kernel-weight gradients from the convolution,
/// chained to cutoffs and raw thetas, plus the input gradient.
pub fn sinc_conv_backward(
    x: &Tensor,
    bank: &SincBank,
    stride: usize,
    upstream: &Tensor,
) -> Result<SincConvGrads> {
    let weights = materialized_weights(bank)?;
    let dw = conv1d_weight_grad(x, upstream, stride, bank.kernel_length())?;
    let (d_theta1, d_theta2, d_f1_hz, d_f2_hz) = chain_to_cutoffs(bank, &dw)?;
    let d_input = conv1d_input_grad(&weights, upstream, stride, x.shape()[1]);
    Ok(SincConvGrads {
        d_theta1,
        d_theta2,
        d_f1_hz,
        d_f2_hz,
        d_input,
    })
}

/// Chains a `(num_filters, length)` kernel-weight gradient to per-filter
/// cutoff and theta gradients.
pub fn chain_to_cutoffs(
    bank: &SincBank,
    dw: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let limits = CutoffLimits::default();
    let n = bank.num_filters();
    let mut d_theta1 = vec![0.0; n];
    let mut d_theta2 = vec![0.0; n];
    let mut d_f1_hz = vec![0.0; n];
    let mut d_f2_hz = vec![0.0; n];
    for (f, p) in bank.filters.iter().enumerate() {
        let (f1, f2) = p.cutoffs();
        let (k1, k2) =
            kernel_grads_from_cutoffs(f1, f2, p.sample_rate, p.length, &bank.window)?;
        let row = dw.row(f);
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for ((d, a), b) in row.iter().zip(&k1).zip(&k2) {
            g1 += d * a;
            g2 += d * b;
        }
        // Kernel partials are in normalized-frequency units; cutoffs in Hz.
        let df1 = g1 / p.sample_rate;
        let df2 = g2 / p.sample_rate;
        d_f1_hz[f] = df1;
        d_f2_hz[f] = df2;
        let jac = cutoff_jacobian(p, &limits);
        d_theta1[f] = df1 * jac[0][0] + df2 * jac[1][0];
        d_theta2[f] = df1 * jac[0][1] + df2 * jac[1][1];
    }
    Ok((d_theta1, d_theta2, d_f1_hz, d_f2_hz))
}
