//! Dense row-major `f64` matrices with the handful of products the model
//! needs.

use std::ops::{AddAssign, Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `idx` stacked into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl AddAssign<&Mat> for Mat {
    fn add_assign(&mut self, o: &Mat) {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "matrix shapes");
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += Σ a[j]·x[j]`; one pass over `y` for four rows.
#[inline]
fn axpy4(y: &mut [f64], a: [f64; 4], x: [&[f64]; 4]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for i in 0..n {
        y[i] += a[0] * x0[i] + a[1] * x1[i] + a[2] * x2[i] + a[3] * x3[i];
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a · b`.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Mat::zeros(a.rows, b.cols);
    let quads = a.cols / 4 * 4;
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        let arow = a.row(i);
        for k in (0..quads).step_by(4) {
            let c = [arow[k], arow[k + 1], arow[k + 2], arow[k + 3]];
            if c != [0.0; 4] {
                axpy4(
                    orow,
                    c,
                    [b.row(k), b.row(k + 1), b.row(k + 2), b.row(k + 3)],
                );
            }
        }
        for k in quads..a.cols {
            if arow[k] != 0.0 {
                axpy(orow, arow[k], b.row(k));
            }
        }
    }
    out
}

/// `acc += aᵀ · b`.
pub fn matmul_tn_acc(acc: &mut Mat, a: &Mat, b: &Mat) {
    assert_eq!(a.rows, b.rows, "matmul_tn rows");
    assert_eq!((acc.rows, acc.cols), (a.cols, b.cols), "matmul_tn output");
    let quads = a.rows / 4 * 4;
    for r in (0..quads).step_by(4) {
        let brows = [b.row(r), b.row(r + 1), b.row(r + 2), b.row(r + 3)];
        let arows = [a.row(r), a.row(r + 1), a.row(r + 2), a.row(r + 3)];
        for i in 0..a.cols {
            let c = [arows[0][i], arows[1][i], arows[2][i], arows[3][i]];
            if c != [0.0; 4] {
                axpy4(&mut acc.data[i * b.cols..(i + 1) * b.cols], c, brows);
            }
        }
    }
    for r in quads..a.rows {
        let brow = b.row(r);
        for (i, &ari) in a.row(r).iter().enumerate() {
            if ari != 0.0 {
                axpy(&mut acc.data[i * b.cols..(i + 1) * b.cols], ari, brow);
            }
        }
    }
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimension");
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(ar, b.row(j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, seed: f64) -> Mat {
        Mat::from_fn(rows, cols, |r, c| {
            ((r * 7 + c * 3) as f64 * 0.37 + seed).sin()
        })
    }

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows, b.cols, |i, j| {
            (0..a.cols).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    fn transpose(a: &Mat) -> Mat {
        Mat::from_fn(a.cols, a.rows, |i, j| a[(j, i)])
    }

    #[test]
    fn products_match_naive() {
        let (a, b) = (m(4, 5, 0.1), m(5, 3, 0.7));
        let close = |x: &Mat, y: &Mat| {
            x.data
                .iter()
                .zip(&y.data)
                .all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&matmul(&a, &b), &naive(&a, &b)));
        let c = m(4, 3, 0.2);
        let mut acc = Mat::zeros(5, 3);
        matmul_tn_acc(&mut acc, &a, &c);
        assert!(close(&acc, &naive(&transpose(&a), &c)));
        let d = m(6, 5, 0.9);
        assert!(close(&matmul_nt(&a, &d), &naive(&a, &transpose(&d))));
    }

    #[test]
    fn gather_rows_copies() {
        let a = m(4, 2, 0.3);
        let g = a.gather_rows(&[3, 0]);
        assert_eq!(g.row(0), a.row(3));
        assert_eq!(g.row(1), a.row(0));
    }
}
