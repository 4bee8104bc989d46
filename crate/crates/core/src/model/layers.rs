//! Forward/backward kernels shared by the encoder and the heads.

use rand::Rng;

use crate::tensor::{gemm_into, matmul, Mat, Trans};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear { weight: Mat::zeros(d_in, d_out), bias: vec![0.0; d_out] }
    }

    pub fn d_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn n_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = matmul(x, Trans::No, &self.weight, Trans::No);
        y.add_row_vector(&self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Mat, dy: &Mat, grad: &mut Linear) -> Mat {
        self.backward_params(x, dy, grad);
        matmul(dy, Trans::No, &self.weight, Trans::Yes)
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params(&self, x: &Mat, dy: &Mat, grad: &mut Linear) {
        gemm_into(1.0, x, Trans::Yes, dy, Trans::No, 1.0, &mut grad.weight);
        for (g, s) in grad.bias.iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Normalized activations and inverse standard deviations kept for backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normed: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { gain: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    pub fn zeros(dim: usize) -> Self {
        LayerNorm { gain: vec![0.0; dim], bias: vec![0.0; dim] }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCache) {
        let (n, d) = x.shape();
        let mut normed = Mat::zeros(n, d);
        let mut y = Mat::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let nr = normed.row_mut(r);
            for (o, v) in nr.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let yr = y.row_mut(r);
            for i in 0..d {
                yr[i] = normed[(r, i)] * self.gain[i] + self.bias[i];
            }
        }
        (y, LayerNormCache { normed, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Mat, grad: &mut LayerNorm) -> Mat {
        let (n, d) = dy.shape();
        let mut dx = Mat::zeros(n, d);
        let mut dxhat = vec![0.0; d];
        for r in 0..n {
            let xhat = cache.normed.row(r);
            let dyr = dy.row(r);
            for i in 0..d {
                grad.gain[i] += dyr[i] * xhat[i];
                grad.bias[i] += dyr[i];
                dxhat[i] = dyr[i] * self.gain[i];
            }
            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            let out = dx.row_mut(r);
            for i in 0..d {
                out[i] = is * (dxhat[i] - mean_d - xhat[i] * mean_dx);
            }
        }
        dx
    }
}

/// Exact GeLU, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn gelu_mat(x: &Mat) -> Mat {
    Mat::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|&v| gelu(v)).collect())
}

/// `dy * gelu'(x)` elementwise.
pub fn gelu_backward(x: &Mat, dy: &Mat) -> Mat {
    Mat::from_vec(
        x.rows(),
        x.cols(),
        x.as_slice().iter().zip(dy.as_slice()).map(|(&v, &g)| g * gelu_grad(v)).collect(),
    )
}

/// In-place row softmax.
pub fn softmax_rows(m: &mut Mat) {
    let cols = m.cols();
    for row in m.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Inverted-dropout scale factors: `0` for dropped units, `1 / (1 - rate)` for kept ones.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub fn apply_mask_in_place(values: &mut [f64], mask: &[f64]) {
    values.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
}
