//! Dense n-dimensional real array, the value carrier between layers.

use crate::error::{Error, Result};

/// Row-major dense tensor over `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` matches the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of `(i, j)` in a 2-D tensor.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        i * self.shape[1] + j
    }

    /// Flat offset of `(i, j, k)` in a 3-D tensor.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    /// Row `i` of a 2-D tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Plane `i` of a 3-D tensor as a slice of length `shape[1] * shape[2]`.
    pub fn plane(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 3);
        let w = self.shape[1] * self.shape[2];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn plane_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 3);
        let w = self.shape[1] * self.shape[2];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += scale * other`, shapes must match.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `W x` for `W` of shape `(out, in)` and `x` of length `in`.
pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.shape().len(), 2);
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(inp, x.len());
    let mut y = vec![0.0; out];
    for o in 0..out {
        let row = &w.data()[o * inp..(o + 1) * inp];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y[o] = acc;
    }
    y
}

/// `W^T y` for `W` of shape `(out, in)` and `y` of length `out`.
pub fn matvec_t(w: &Tensor, y: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(out, y.len());
    let mut x = vec![0.0; inp];
    for o in 0..out {
        let row = &w.data()[o * inp..(o + 1) * inp];
        let yo = y[o];
        for (xi, wi) in x.iter_mut().zip(row) {
            *xi += wi * yo;
        }
    }
    x
}

/// Accumulates the outer product `y x^T` into `dw` of shape `(out, in)`.
pub fn outer_acc(dw: &mut Tensor, y: &[f64], x: &[f64]) {
    let (out, inp) = (dw.shape()[0], dw.shape()[1]);
    debug_assert_eq!(out, y.len());
    debug_assert_eq!(inp, x.len());
    for o in 0..out {
        let row = &mut dw.data_mut()[o * inp..(o + 1) * inp];
        let yo = y[o];
        for (wi, xi) in row.iter_mut().zip(x) {
            *wi += yo * xi;
        }
    }
}
