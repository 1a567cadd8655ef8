//! Multi-head self-attention and the pre-norm transformer block.

use super::layers::{gelu, gelu_grad, LayerNorm, Linear, LnCache};
use super::tensor::{dot, Mat};
use crate::synth::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Debug)]
pub struct AttnCache {
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Softmax weights per head, `n × n` each.
    p: Vec<Mat>,
    concat: Mat,
}

impl Attention {
    pub fn new(d: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(
            heads > 0 && d % heads == 0,
            "token dimension must be divisible by the head count"
        );
        Self {
            heads,
            q: Linear::xavier(d, d, rng),
            k: Linear::xavier(d, d, rng),
            v: Linear::xavier(d, d, rng),
            o: Linear::xavier(d, d, rng),
        }
    }

    pub fn zeros(d: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, AttnCache) {
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let n = x.rows;
        let d = x.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Mat::zeros(n, d);
        let mut ps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Mat::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let row = p.row_mut(i);
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    row[j] = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    mx = mx.max(row[j]);
                }
                let mut s = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - mx).exp();
                    s += *r;
                }
                for r in row.iter_mut() {
                    *r /= s;
                }
                let out = &mut concat.row_mut(i)[cols.clone()];
                for j in 0..n {
                    let pij = p[(i, j)];
                    for (o, vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += pij * vv;
                    }
                }
            }
            ps.push(p);
        }
        let y = self.o.forward(&concat);
        (
            y,
            AttnCache {
                x: x.clone(),
                q,
                k,
                v,
                p: ps,
                concat,
            },
        )
    }

    pub fn backward(&self, c: &AttnCache, dy: &Mat, grad: &mut Attention) -> Mat {
        let dconcat = self.o.backward(&c.concat, dy, &mut grad.o);
        let (n, d) = (c.x.rows, c.x.cols);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(n, d);
        let mut dk = Mat::zeros(n, d);
        let mut dv = Mat::zeros(n, d);
        let mut dp = vec![0.0; n];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &c.p[h];
            for i in 0..n {
                let doi = &dconcat.row(i)[cols.clone()];
                for j in 0..n {
                    dp[j] = dot(doi, &c.v.row(j)[cols.clone()]);
                    let pij = p[(i, j)];
                    for (a, b) in dv.row_mut(j)[cols.clone()].iter_mut().zip(doi) {
                        *a += pij * b;
                    }
                }
                let pr = p.row(i);
                let s: f64 = dp.iter().zip(pr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    let ds = pr[j] * (dp[j] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &c.k.row(j)[cols.clone()];
                    for (a, b) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *a += ds * b;
                    }
                    let qi = &c.q.row(i)[cols.clone()];
                    for (a, b) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *a += ds * b;
                    }
                }
            }
        }
        let mut dx = self.q.backward(&c.x, &dq, &mut grad.q);
        dx += &self.k.backward(&c.x, &dk, &mut grad.k);
        dx += &self.v.backward(&c.x, &dv, &mut grad.v);
        dx
    }
}

/// Pre-norm block: `h = x + MHA(LN₁(x))`, `y = h + W₂·GELU(W₁·LN₂(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    m_in: Mat,
    pre: Mat,
    act: Mat,
}

impl Block {
    pub fn new(d: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            ln1: LayerNorm::new(d),
            attn: Attention::new(d, heads, rng),
            ln2: LayerNorm::new(d),
            fc1: Linear::xavier(d, 4 * d, rng),
            fc2: Linear::xavier(4 * d, d, rng),
        }
    }

    pub fn zeros(d: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::zeros(d),
            attn: Attention::zeros(d, heads),
            ln2: LayerNorm::zeros(d),
            fc1: Linear::zeros(d, 4 * d),
            fc2: Linear::zeros(4 * d, d),
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, BlockCache) {
        let (a_in, ln1) = self.ln1.forward(x);
        let (a_out, attn) = self.attn.forward(&a_in);
        let mut h = x.clone();
        h += &a_out;
        let (m_in, ln2) = self.ln2.forward(&h);
        let pre = self.fc1.forward(&m_in);
        let mut act = pre.clone();
        act.data.iter_mut().for_each(|v| *v = gelu(*v));
        let mut y = h;
        y += &self.fc2.forward(&act);
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                m_in,
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, c: &BlockCache, dy: &Mat, grad: &mut Block) -> Mat {
        let mut dact = self.fc2.backward(&c.act, dy, &mut grad.fc2);
        for (g, x) in dact.data.iter_mut().zip(&c.pre.data) {
            *g *= gelu_grad(*x);
        }
        let dm_in = self.fc1.backward(&c.m_in, &dact, &mut grad.fc1);
        let mut dh = dy.clone();
        dh += &self.ln2.backward(&c.ln2, &dm_in, &mut grad.ln2);
        let da_in = self.attn.backward(&c.attn, &dh, &mut grad.attn);
        let mut dx = dh;
        dx += &self.ln1.backward(&c.ln1, &da_in, &mut grad.ln1);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_mat(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn single_token_returns_projected_value() {
        let mut rng = Rng::new(5);
        let a = Attention::new(8, 2, &mut rng);
        let x = rand_mat(1, 8, &mut rng);
        let (y, _) = a.forward(&x);
        let expect = a.o.forward(&a.v.forward(&x));
        assert!(y
            .data
            .iter()
            .zip(&expect.data)
            .all(|(p, q)| (p - q).abs() < 1e-14));
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = Rng::new(6);
        let mut a = Attention::new(8, 4, &mut rng);
        // Zero key weights make every key equal to the key bias.
        a.k.w.fill(0.0);
        a.k.b = rand_mat(1, 8, &mut rng);
        let x = rand_mat(5, 8, &mut rng);
        let (y, _) = a.forward(&x);
        let v = a.v.forward(&x);
        let mean = Mat::from_fn(1, 8, |_, c| (0..5).map(|r| v[(r, c)]).sum::<f64>() / 5.0);
        let expect = a.o.forward(&mean);
        for r in 0..5 {
            assert!(y
                .row(r)
                .iter()
                .zip(expect.row(0))
                .all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    fn weighted_sum(y: &Mat, w: &Mat) -> f64 {
        y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
    }

    fn params_mut(a: &mut Attention) -> Vec<&mut Mat> {
        vec![
            &mut a.q.w, &mut a.q.b, &mut a.k.w, &mut a.k.b, &mut a.v.w, &mut a.v.b, &mut a.o.w,
            &mut a.o.b,
        ]
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        let mut a = Attention::new(8, 2, &mut rng);
        for m in params_mut(&mut a) {
            m.data.iter_mut().for_each(|v| *v = 0.5 * rng.normal());
        }
        let x = rand_mat(4, 8, &mut rng);
        let w = rand_mat(4, 8, &mut rng);
        let (_, cache) = a.forward(&x);
        let mut g = Attention::zeros(8, 2);
        let dx = a.backward(&cache, &w, &mut g);
        let eps = 1e-5;
        // Key biases have structurally zero gradients; the floor keeps FD noise out.
        let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(1e-3);
        let mut worst: f64 = 0.0;
        let n_params = params_mut(&mut a.clone()).len();
        for pi in 0..n_params {
            let len = params_mut(&mut a.clone())[pi].data.len();
            for e in 0..len {
                let mut ap = a.clone();
                params_mut(&mut ap)[pi].data[e] += eps;
                let mut am = a.clone();
                params_mut(&mut am)[pi].data[e] -= eps;
                let num = (weighted_sum(&ap.forward(&x).0, &w)
                    - weighted_sum(&am.forward(&x).0, &w))
                    / (2.0 * eps);
                let an = params_mut(&mut g.clone())[pi].data[e];
                worst = worst.max(rel(an, num));
            }
        }
        for e in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[e] += eps;
            xm.data[e] -= eps;
            let num = (weighted_sum(&a.forward(&xp).0, &w) - weighted_sum(&a.forward(&xm).0, &w))
                / (2.0 * eps);
            worst = worst.max(rel(dx.data[e], num));
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn block_gradient_matches_finite_differences_on_input() {
        let mut rng = Rng::new(8);
        let b = Block::new(8, 2, &mut rng);
        let x = rand_mat(3, 8, &mut rng);
        let w = rand_mat(3, 8, &mut rng);
        let (_, cache) = b.forward(&x);
        let mut g = Block::zeros(8, 2);
        let dx = b.backward(&cache, &w, &mut g);
        let eps = 1e-5;
        for e in 0..x.data.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[e] += eps;
            xm.data[e] -= eps;
            let num = (weighted_sum(&b.forward(&xp).0, &w) - weighted_sum(&b.forward(&xm).0, &w))
                / (2.0 * eps);
            assert!((dx.data[e] - num).abs() < 1e-7 * num.abs().max(1.0));
        }
    }
}
