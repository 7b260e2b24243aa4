//! Batch normalization over the channel axis.

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization with affine parameters and running
/// statistics. Accepts `(batch, channels)` or `(batch, channels, time)`
/// inputs; statistics reduce over everything except the channel axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Saved forward state for the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    reduce_count: usize,
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [batch, channels] => Ok((*batch, *channels, 1)),
        [batch, channels, time] => Ok((*batch, *channels, *time)),
        other => Err(Error::Shape(format!(
            "batch_norm expects 2-D or 3-D input, got {other:?}"
        ))),
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::new(vec![channels], vec![1.0; channels]).unwrap()),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalizes `x`. Train mode uses batch statistics (batch >= 2) and
    /// updates the running estimates; eval mode uses the running
    /// estimates and returns no cache.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        let (batch, channels, time) = channel_layout(x.shape())?;
        if channels != self.channels() {
            return Err(Error::Shape(format!(
                "batch_norm built for {} channels, input has {channels}",
                self.channels()
            )));
        }
        match mode {
            Mode::Eval => {
                let mut y = Tensor::zeros(x.shape());
                self.apply(
                    x,
                    &mut y,
                    &self.running_mean,
                    &inv_std_of(&self.running_var),
                    batch,
                    channels,
                    time,
                );
                Ok((y, None))
            }
            Mode::Train => {
                if batch < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch_norm train mode needs batch >= 2, got {batch}"
                    )));
                }
                let m = (batch * time) as f64;
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        for t in 0..time {
                            mean[c] += x.data()[(b * channels + c) * time + t];
                        }
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..batch {
                    for c in 0..channels {
                        for t in 0..time {
                            let d = x.data()[(b * channels + c) * time + t] - mean[c];
                            var[c] += d * d;
                        }
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let inv_std = inv_std_of(&var);

                let mut xhat = Tensor::zeros(x.shape());
                for b in 0..batch {
                    for c in 0..channels {
                        for t in 0..time {
                            let i = (b * channels + c) * time + t;
                            xhat.data_mut()[i] = (x.data()[i] - mean[c]) * inv_std[c];
                        }
                    }
                }
                let mut y = Tensor::zeros(x.shape());
                for b in 0..batch {
                    for c in 0..channels {
                        let g = self.gamma.value.data()[c];
                        let be = self.beta.value.data()[c];
                        for t in 0..time {
                            let i = (b * channels + c) * time + t;
                            y.data_mut()[i] = g * xhat.data()[i] + be;
                        }
                    }
                }
                for c in 0..channels {
                    self.running_mean[c] = BN_MOMENTUM * self.running_mean[c] + (1.0 - BN_MOMENTUM) * mean[c];
                    self.running_var[c] = BN_MOMENTUM * self.running_var[c] + (1.0 - BN_MOMENTUM) * var[c];
                }
                Ok((
                    y,
                    Some(BnCache {
                        xhat,
                        inv_std,
                        reduce_count: batch * time,
                    }),
                ))
            }
        }
    }

    fn apply(
        &self,
        x: &Tensor,
        y: &mut Tensor,
        mean: &[f64],
        inv_std: &[f64],
        batch: usize,
        channels: usize,
        time: usize,
    ) {
        for b in 0..batch {
            for c in 0..channels {
                let g = self.gamma.value.data()[c];
                let be = self.beta.value.data()[c];
                for t in 0..time {
                    let i = (b * channels + c) * time + t;
                    y.data_mut()[i] = g * (x.data()[i] - mean[c]) * inv_std[c] + be;
                }
            }
        }
    }

    /// Train-mode backward. Returns the input gradient and the
    /// `(d_gamma, d_beta)` pair.
    pub fn backward(&self, cache: &BnCache, upstream: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (batch, channels, time) = channel_layout(upstream.shape()).expect("same layout as forward");
        let m = cache.reduce_count as f64;
        let mut d_gamma = vec![0.0; channels];
        let mut d_beta = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                for t in 0..time {
                    let i = (b * channels + c) * time + t;
                    d_gamma[c] += upstream.data()[i] * cache.xhat.data()[i];
                    d_beta[c] += upstream.data()[i];
                }
            }
        }
        let mut dx = Tensor::zeros(upstream.shape());
        for b in 0..batch {
            for c in 0..channels {
                let g = self.gamma.value.data()[c];
                let scale = g * cache.inv_std[c] / m;
                for t in 0..time {
                    let i = (b * channels + c) * time + t;
                    dx.data_mut()[i] = scale
                        * (m * upstream.data()[i]
                            - d_beta[c]
                            - cache.xhat.data()[i] * d_gamma[c]);
                }
            }
        }
        (dx, d_gamma, d_beta)
    }
}

fn inv_std_of(var: &[f64]) -> Vec<f64> {
    var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_maps_to_beta() {
        let mut bn = BatchNorm::new(2);
        bn.beta.value.data_mut().copy_from_slice(&[0.5, -1.5]);
        let x = Tensor::new(vec![3, 2], vec![7.0, 3.0, 7.0, 3.0, 7.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for b in 0..3 {
            assert!((y.data()[b * 2] - 0.5).abs() < 1e-9);
            assert!((y.data()[b * 2 + 1] + 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm::new(3);
        let x = Tensor::new(
            vec![16, 3, 4],
            (0..16 * 3 * 4).map(|_| rng.gen_range(-2.0..5.0)).collect(),
        )
        .unwrap();
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..16 {
                for t in 0..4 {
                    vals.push(y.data()[(b * 3 + c) * 4 + t]);
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
        }
    }

    #[test]
    fn rejects_single_example_training_batches() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::zeros(&[1, 2]);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![4, 1], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        // running stats moved 10% toward the batch (mean 4, var 5).
        let (y, cache) = bn.forward(&x, Mode::Eval).unwrap();
        assert!(cache.is_none());
        let expect = (1.0 - 0.4) / (0.9 * 1.0 + 0.1 * 5.0 + BN_EPS).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::gradcheck::{central_diff, max_rel_error};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let shape = [5usize, 3, 2];
        let x = Tensor::new(
            shape.to_vec(),
            (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let coeff: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream = Tensor::new(shape.to_vec(), coeff.clone()).unwrap();

        let mut bn = BatchNorm::new(3);
        bn.gamma.value.data_mut().copy_from_slice(&[1.2, 0.8, -0.5]);
        bn.beta.value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        let (dx, d_gamma, d_beta) = bn.backward(cache.as_ref().unwrap(), &upstream);

        // Finite differences re-run the forward; running-stat updates do
        // not affect the train-mode output.
        let loss = |xs: &[f64], gs: &[f64], bs: &[f64]| -> f64 {
            let mut bn2 = BatchNorm::new(3);
            bn2.gamma.value.data_mut().copy_from_slice(gs);
            bn2.beta.value.data_mut().copy_from_slice(bs);
            let xt = Tensor::new(shape.to_vec(), xs.to_vec()).unwrap();
            let (y, _) = bn2.forward(&xt, Mode::Train).unwrap();
            y.data().iter().zip(&coeff).map(|(a, b)| a * b).sum()
        };
        let g = bn.gamma.value.data().to_vec();
        let be = bn.beta.value.data().to_vec();

        let mut xp = x.data().to_vec();
        let nx = central_diff(|p| loss(p, &g, &be), &mut xp, 1e-6);
        assert!(max_rel_error(dx.data(), &nx) < 1e-6);

        let mut gp = g.clone();
        let xv = x.data().to_vec();
        let ng = central_diff(|p| loss(&xv, p, &be), &mut gp, 1e-6);
        assert!(max_rel_error(&d_gamma, &ng) < 1e-6);

        let mut bp = be.clone();
        let nb = central_diff(|p| loss(&xv, &g, p), &mut bp, 1e-6);
        assert!(max_rel_error(&d_beta, &nb) < 1e-6);
    }
}
