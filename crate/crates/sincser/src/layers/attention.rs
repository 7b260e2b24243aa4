//! Single-head scaled dot-product attention pooling.
//!
//! A learned query scores every position's key projection; the softmax
//! weights pool the value projections into one fixed-size vector. With a
//! single position the softmax collapses and the output is exactly that
//! position's value row.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::dense::softmax;
use crate::layers::{init_uniform, Param};
use crate::tensor::{matvec, matvec_t, outer_acc, Tensor};

#[derive(Debug, Clone)]
pub struct SelfAttention {
    /// Key projection, `(key_dim, input_dim)`.
    pub w_k: Param,
    /// Value projection, `(value_dim, input_dim)`.
    pub w_v: Param,
    /// Learned query, `(key_dim)`.
    pub query: Param,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    hs: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub dw_k: Tensor,
    pub dw_v: Tensor,
    pub d_query: Vec<f64>,
}

impl SelfAttention {
    pub fn new<R: Rng>(input_dim: usize, key_dim: usize, value_dim: usize, rng: &mut R) -> Self {
        Self {
            w_k: Param::new(init_uniform(&[key_dim, input_dim], input_dim, rng)),
            w_v: Param::new(init_uniform(&[value_dim, input_dim], input_dim, rng)),
            query: Param::new(init_uniform(&[key_dim], key_dim, rng)),
        }
    }

    pub fn key_dim(&self) -> usize {
        self.query.value.len()
    }

    pub fn value_dim(&self) -> usize {
        self.w_v.value.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.w_k.value.len() + self.w_v.value.len() + self.query.value.len()
    }

    /// Pools a non-empty sequence into one vector; the attention weights
    /// in the cache sum to 1.
    pub fn forward(&self, hs: &[Vec<f64>]) -> Result<(Vec<f64>, AttnCache)> {
        if hs.is_empty() {
            return Err(Error::InvalidArgument(
                "attention needs at least one position".into(),
            ));
        }
        let scale = 1.0 / (self.key_dim() as f64).sqrt();
        let keys: Vec<Vec<f64>> = hs.iter().map(|h| matvec(&self.w_k.value, h)).collect();
        let values: Vec<Vec<f64>> = hs.iter().map(|h| matvec(&self.w_v.value, h)).collect();
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| {
                scale
                    * k.iter()
                        .zip(self.query.value.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let weights = softmax(&scores);
        let mut out = vec![0.0; self.value_dim()];
        for (w, v) in weights.iter().zip(&values) {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
        Ok((
            out,
            AttnCache {
                hs: hs.to_vec(),
                keys,
                values,
                weights,
            },
        ))
    }

    /// Returns parameter gradients and per-position input gradients.
    pub fn backward(&self, cache: &AttnCache, upstream: &[f64]) -> (AttnGrads, Vec<Vec<f64>>) {
        let seq = cache.hs.len();
        let scale = 1.0 / (self.key_dim() as f64).sqrt();
        let mut grads = AttnGrads {
            dw_k: Tensor::zeros(self.w_k.value.shape()),
            dw_v: Tensor::zeros(self.w_v.value.shape()),
            d_query: vec![0.0; self.key_dim()],
        };
        let mut d_hs = vec![vec![0.0; cache.hs[0].len()]; seq];

        // d weights_t = upstream . value_t, then softmax backward.
        let d_alpha: Vec<f64> = cache
            .values
            .iter()
            .map(|v| v.iter().zip(upstream).map(|(a, b)| a * b).sum())
            .collect();
        let dot: f64 = cache
            .weights
            .iter()
            .zip(&d_alpha)
            .map(|(w, d)| w * d)
            .sum();
        let d_scores: Vec<f64> = cache
            .weights
            .iter()
            .zip(&d_alpha)
            .map(|(w, d)| w * (d - dot))
            .collect();

        let q = self.query.value.data();
        for t in 0..seq {
            // Value path: out += alpha_t * W_v h_t.
            let a = cache.weights[t];
            let dv: Vec<f64> = upstream.iter().map(|u| a * u).collect();
            outer_acc(&mut grads.dw_v, &dv, &cache.hs[t]);
            let dh_v = matvec_t(&self.w_v.value, &dv);

            // Score path: s_t = scale * q . (W_k h_t).
            let ds = d_scores[t] * scale;
            for (dq, k) in grads.d_query.iter_mut().zip(&cache.keys[t]) {
                *dq += ds * k;
            }
            let dk: Vec<f64> = q.iter().map(|qi| ds * qi).collect();
            outer_acc(&mut grads.dw_k, &dk, &cache.hs[t]);
            let dh_k = matvec_t(&self.w_k.value, &dk);

            for ((d, a), b) in d_hs[t].iter_mut().zip(&dh_v).zip(&dh_k) {
                *d = a + b;
            }
        }
        (grads, d_hs)
    }

    pub fn accumulate(&mut self, grads: &AttnGrads) {
        self.w_k.grad.add_assign(&grads.dw_k);
        self.w_v.grad.add_assign(&grads.dw_v);
        for (g, d) in self.query.grad.data_mut().iter_mut().zip(&grads.d_query) {
            *g += d;
        }
    }
}
