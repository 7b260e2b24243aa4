//! Valid-mode 1-D convolution over a batch of waveforms.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Output frame count for valid-mode convolution:
/// `floor((time - length) / stride) + 1`.
pub fn conv_frames(time: usize, length: usize, stride: usize) -> usize {
    (time - length) / stride + 1
}

fn check_geometry(x: &Tensor, length: usize, stride: usize) -> Result<(usize, usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "conv1d expects (batch, time), got {:?}",
            x.shape()
        )));
    }
    let (batch, time) = (x.shape()[0], x.shape()[1]);
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if time < length {
        return Err(Error::Shape(format!(
            "input of {time} samples is shorter than the {length}-tap kernel"
        )));
    }
    Ok((batch, time, conv_frames(time, length, stride)))
}

/// `y[b, f, t] = sum_l x[b, t*stride + l] * w[f, l]` (no padding).
///
/// Batch rows are independent and fan out in parallel.
pub fn conv1d(x: &Tensor, weights: &Tensor, stride: usize) -> Result<Tensor> {
    let (num_filters, length) = (weights.shape()[0], weights.shape()[1]);
    let (batch, _, frames) = check_geometry(x, length, stride)?;
    let planes = par::map_range(batch, |b| {
        let xr = x.row(b);
        let mut plane = vec![0.0; num_filters * frames];
        for f in 0..num_filters {
            let w = weights.row(f);
            for t in 0..frames {
                let seg = &xr[t * stride..t * stride + length];
                let mut acc = 0.0;
                for (xi, wi) in seg.iter().zip(w) {
                    acc += xi * wi;
                }
                plane[f * frames + t] = acc;
            }
        }
        plane
    });
    let mut out = Tensor::zeros(&[batch, num_filters, frames]);
    for (b, plane) in planes.into_iter().enumerate() {
        out.plane_mut(b).copy_from_slice(&plane);
    }
    Ok(out)
}

/// Gradient of the loss with respect to the kernel bank, summed over the
/// batch in index order.
pub fn conv1d_weight_grad(
    x: &Tensor,
    upstream: &Tensor,
    stride: usize,
    length: usize,
) -> Result<Tensor> {
    let (batch, num_filters, frames) = (
        upstream.shape()[0],
        upstream.shape()[1],
        upstream.shape()[2],
    );
    let per_example = par::map_range(batch, |b| {
        let xr = x.row(b);
        let up = upstream.plane(b);
        let mut dw = vec![0.0; num_filters * length];
        for f in 0..num_filters {
            for t in 0..frames {
                let u = up[f * frames + t];
                if u == 0.0 {
                    continue;
                }
                let seg = &xr[t * stride..t * stride + length];
                let row = &mut dw[f * length..(f + 1) * length];
                for (d, xi) in row.iter_mut().zip(seg) {
                    *d += u * xi;
                }
            }
        }
        dw
    });
    let mut dw = Tensor::zeros(&[num_filters, length]);
    for example in per_example {
        for (a, b) in dw.data_mut().iter_mut().zip(&example) {
            *a += b;
        }
    }
    Ok(dw)
}

/// Gradient of the loss with respect to the input waveforms: the upstream
/// gradient cross-correlated with the kernels.
pub fn conv1d_input_grad(weights: &Tensor, upstream: &Tensor, stride: usize, time: usize) -> Tensor {
    let (batch, num_filters, frames) = (
        upstream.shape()[0],
        upstream.shape()[1],
        upstream.shape()[2],
    );
    let length = weights.shape()[1];
    let rows = par::map_range(batch, |b| {
        let up = upstream.plane(b);
        let mut dx = vec![0.0; time];
        for f in 0..num_filters {
            let w = weights.row(f);
            for t in 0..frames {
                let u = up[f * frames + t];
                if u == 0.0 {
                    continue;
                }
                let seg = &mut dx[t * stride..t * stride + length];
                for (d, wi) in seg.iter_mut().zip(w) {
                    *d += u * wi;
                }
            }
        }
        dx
    });
    let mut dx = Tensor::zeros(&[batch, time]);
    for (b, row) in rows.into_iter().enumerate() {
        dx.row_mut(b).copy_from_slice(&row);
    }
    dx
}
