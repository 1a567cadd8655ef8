//! Linear, layer-norm and GELU layers with explicit backward passes.

use super::tensor::{matmul, matmul_nt, matmul_tn_acc, Mat};
use crate::synth::Rng;

pub const LN_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Mat::zeros(fan_in, fan_out),
            b: Mat::zeros(1, fan_out),
        }
    }

    /// Normal weights with variance `2 / (fan_in + fan_out)`, zero bias.
    pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_fn(fan_in, fan_out, |_, _| std * rng.normal());
        Self {
            w,
            b: Mat::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = matmul(x, &self.w);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.b.data) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&self, x: &Mat, dy: &Mat, grad: &mut Linear) -> Mat {
        self.accumulate(x, dy, grad);
        matmul_nt(dy, &self.w)
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: &Mat, dy: &Mat, grad: &mut Linear) {
        matmul_tn_acc(&mut grad.w, x, dy);
        for r in 0..dy.rows {
            for (g, d) in grad.b.data.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Mat,
    pub bias: Mat,
}

#[derive(Clone, Debug)]
pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gain: Mat::from_vec(1, d, vec![1.0; d]),
            bias: Mat::zeros(1, d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gain: Mat::zeros(1, d),
            bias: Mat::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LnCache) {
        let d = x.cols;
        let mut xhat = Mat::zeros(x.rows, d);
        let mut y = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[(r, c)] = h;
                y[(r, c)] = h * self.gain.data[c] + self.bias.data[c];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache, dy: &Mat, grad: &mut LayerNorm) -> Mat {
        let d = dy.cols;
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxh = vec![0.0; d];
        for r in 0..dy.rows {
            let (dyr, xh) = (dy.row(r), cache.xhat.row(r));
            for c in 0..d {
                grad.gain.data[c] += dyr[c] * xh[c];
                grad.bias.data[c] += dyr[c];
                dxh[c] = dyr[c] * self.gain.data[c];
            }
            let m1 = dxh.iter().sum::<f64>() / d as f64;
            let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = is * (dxh[c] - m1 - xh[c] * m2);
            }
        }
        dx
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_C: f64 = 0.044715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}
