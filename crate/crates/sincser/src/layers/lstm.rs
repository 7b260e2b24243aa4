//! LSTM cell with backpropagation through time.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{init_uniform, Param};
use crate::tensor::{matvec_t, outer_acc, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard LSTM cell. Gate pre-activations are stacked `[i; f; g; o]` in
/// the weight matrices: input and forget and output gates are sigmoids,
/// the candidate `g` is a tanh.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// Input weights, `(4H, D)`.
    pub w_x: Param,
    /// Recurrent weights, `(4H, H)`.
    pub w_h: Param,
    /// Bias, `(4H)`. The forget-gate slice starts at 1 so early training
    /// keeps cell state around.
    pub b: Param,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Per-sequence forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<Vec<f64>>,
    /// h_0 .. h_T (h_0 is the zero initial state).
    hs: Vec<Vec<f64>>,
    /// c_0 .. c_T.
    cs: Vec<Vec<f64>>,
    gates: Vec<[Vec<f64>; 4]>,
    tanh_c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub dwx: Tensor,
    pub dwh: Tensor,
    pub db: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor::zeros(&[4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        Self {
            w_x: Param::new(init_uniform(&[4 * hidden, input_dim], input_dim, rng)),
            w_h: Param::new(init_uniform(&[4 * hidden, hidden], hidden, rng)),
            b: Param::new(b),
            input_dim,
            hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_x.value.len() + self.w_h.value.len() + self.b.value.len()
    }

    fn gate_preacts(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hdim = self.hidden;
        let mut z = self.b.value.data().to_vec();
        for r in 0..4 * hdim {
            let wx = self.w_x.value.row(r);
            let mut acc = 0.0;
            for (wi, xi) in wx.iter().zip(x) {
                acc += wi * xi;
            }
            let wh = self.w_h.value.row(r);
            for (wi, hi) in wh.iter().zip(h) {
                acc += wi * hi;
            }
            z[r] += acc;
        }
        z
    }

    /// One cell update: `(h', c')` from input `x` and state `(h, c)`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim || h.len() != self.hidden || c.len() != self.hidden {
            return Err(Error::Shape(format!(
                "lstm step expects x:{} h:{} c:{}, got x:{} h:{} c:{}",
                self.input_dim,
                self.hidden,
                self.hidden,
                x.len(),
                h.len(),
                c.len()
            )));
        }
        let (h2, c2, _) = self.step_cached(x, h, c);
        Ok((h2, c2))
    }

    #[allow(clippy::type_complexity)]
    fn step_cached(
        &self,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>, ([Vec<f64>; 4], Vec<f64>)) {
        let hdim = self.hidden;
        let z = self.gate_preacts(x, h);
        let i: Vec<f64> = z[0..hdim].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hdim..2 * hdim].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hdim..3 * hdim].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hdim..4 * hdim].iter().map(|&v| sigmoid(v)).collect();
        let mut c2 = vec![0.0; hdim];
        for k in 0..hdim {
            c2[k] = f[k] * c[k] + i[k] * g[k];
        }
        let tanh_c: Vec<f64> = c2.iter().map(|v| v.tanh()).collect();
        let mut h2 = vec![0.0; hdim];
        for k in 0..hdim {
            h2[k] = o[k] * tanh_c[k];
        }
        (h2, c2, ([i, f, g, o], tanh_c))
    }

    /// Runs the cell over a sequence from the zero state, returning all
    /// hidden states `h_1..h_T` and the cache for [`Self::backward_seq`].
    pub fn forward_seq(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, LstmCache)> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("lstm needs a non-empty sequence".into()));
        }
        let hdim = self.hidden;
        let mut cache = LstmCache {
            xs: xs.to_vec(),
            hs: vec![vec![0.0; hdim]],
            cs: vec![vec![0.0; hdim]],
            gates: Vec::with_capacity(xs.len()),
            tanh_c: Vec::with_capacity(xs.len()),
        };
        for x in xs {
            if x.len() != self.input_dim {
                return Err(Error::Shape(format!(
                    "lstm input dim {} expected {}",
                    x.len(),
                    self.input_dim
                )));
            }
            let h = cache.hs.last().unwrap().clone();
            let c = cache.cs.last().unwrap().clone();
            let (h2, c2, (gates, tanh_c)) = self.step_cached(x, &h, &c);
            cache.hs.push(h2);
            cache.cs.push(c2);
            cache.gates.push(gates);
            cache.tanh_c.push(tanh_c);
        }
        Ok((cache.hs[1..].to_vec(), cache))
    }

    /// Backpropagation through time. `upstream[t]` is the loss gradient on
    /// `h_{t+1}`; steps without a direct loss contribution pass zeros.
    /// Returns parameter gradients and the per-step input gradients.
    pub fn backward_seq(
        &self,
        cache: &LstmCache,
        upstream: &[Vec<f64>],
    ) -> (LstmGrads, Vec<Vec<f64>>) {
        let hdim = self.hidden;
        let steps = cache.gates.len();
        assert_eq!(upstream.len(), steps);
        let mut grads = LstmGrads {
            dwx: Tensor::zeros(self.w_x.value.shape()),
            dwh: Tensor::zeros(self.w_h.value.shape()),
            db: vec![0.0; 4 * hdim],
        };
        let mut dxs = vec![vec![0.0; self.input_dim]; steps];
        let mut dh_next = vec![0.0; hdim];
        let mut dc_next = vec![0.0; hdim];
        for t in (0..steps).rev() {
            let [i, f, g, o] = &cache.gates[t];
            let tanh_c = &cache.tanh_c[t];
            let c_prev = &cache.cs[t];
            let h_prev = &cache.hs[t];

            let mut dz = vec![0.0; 4 * hdim];
            let mut dc = vec![0.0; hdim];
            for k in 0..hdim {
                let dh = upstream[t][k] + dh_next[k];
                let do_ = dh * tanh_c[k];
                dc[k] = dc_next[k] + dh * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                let di = dc[k] * g[k];
                let df = dc[k] * c_prev[k];
                let dg = dc[k] * i[k];
                dz[k] = di * i[k] * (1.0 - i[k]);
                dz[hdim + k] = df * f[k] * (1.0 - f[k]);
                dz[2 * hdim + k] = dg * (1.0 - g[k] * g[k]);
                dz[3 * hdim + k] = do_ * o[k] * (1.0 - o[k]);
            }
            outer_acc(&mut grads.dwx, &dz, &cache.xs[t]);
            outer_acc(&mut grads.dwh, &dz, h_prev);
            for (b, d) in grads.db.iter_mut().zip(&dz) {
                *b += d;
            }
            dxs[t] = matvec_t(&self.w_x.value, &dz);
            dh_next = matvec_t(&self.w_h.value, &dz);
            for k in 0..hdim {
                dc_next[k] = dc[k] * f[k];
            }
        }
        (grads, dxs)
    }

    pub fn accumulate(&mut self, grads: &LstmGrads) {
        self.w_x.grad.add_assign(&grads.dwx);
        self.w_h.grad.add_assign(&grads.dwh);
        for (g, d) in self.b.grad.data_mut().iter_mut().zip(&grads.db) {
            *g += d;
        }
    }
}
