//! Single-precision block kernels for timing dense attention over every token
//! against a registration-guided block at fixed k.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::attention::Block;
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::synth::Rng;

const KEY_TILE: usize = 256;

/// Vectorisable `exp` for arguments in `[-87, 0]` (Cody–Waite reduction plus a
/// degree-6 polynomial, relative error below 2e-7).
#[inline(always)]
fn fast_exp(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    const ROUND: f32 = 12_582_912.0;
    let x = x.max(-87.0);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    p * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

#[derive(Clone, Debug)]
struct LinearF32 {
    /// `in × out`.
    w: Vec<f32>,
    b: Vec<f32>,
    fan_in: usize,
    fan_out: usize,
}

impl LinearF32 {
    fn from_f64(w: &Mat, b: &Mat) -> Self {
        Self {
            w: w.data.iter().map(|v| *v as f32).collect(),
            b: b.data.iter().map(|v| *v as f32).collect(),
            fan_in: w.rows,
            fan_out: w.cols,
        }
    }

    fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let mut y = Vec::with_capacity(n * self.fan_out);
        for r in 0..n {
            y.extend_from_slice(&self.b);
            let yr = &mut y[r * self.fan_out..];
            for (k, xv) in x[r * self.fan_in..(r + 1) * self.fan_in].iter().enumerate() {
                let wr = &self.w[k * self.fan_out..(k + 1) * self.fan_out];
                for (o, w) in yr[..self.fan_out].iter_mut().zip(wr) {
                    *o += xv * w;
                }
            }
        }
        y
    }
}

fn layer_norm(x: &[f32], d: usize, gain: &[f32], bias: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0; x.len()];
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let mean = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + super::layers::LN_EPS as f32).sqrt();
        for c in 0..d {
            yr[c] = (xr[c] - mean) * is * gain[c] + bias[c];
        }
    }
    y
}

fn gelu(x: f32) -> f32 {
    super::layers::gelu(x as f64) as f32
}

/// `f32` copy of a [`Block`] with a streaming (tiled online-softmax)
/// attention kernel that never materialises the full score matrix.
#[derive(Clone, Debug)]
pub struct BlockF32 {
    d: usize,
    heads: usize,
    ln1: (Vec<f32>, Vec<f32>),
    ln2: (Vec<f32>, Vec<f32>),
    q: LinearF32,
    k: LinearF32,
    v: LinearF32,
    o: LinearF32,
    fc1: LinearF32,
    fc2: LinearF32,
}

impl From<&Block> for BlockF32 {
    fn from(b: &Block) -> Self {
        let f = |m: &Mat| m.data.iter().map(|v| *v as f32).collect::<Vec<f32>>();
        let a = &b.attn;
        Self {
            d: b.ln1.gain.cols,
            heads: a.heads,
            ln1: (f(&b.ln1.gain), f(&b.ln1.bias)),
            ln2: (f(&b.ln2.gain), f(&b.ln2.bias)),
            q: LinearF32::from_f64(&a.q.w, &a.q.b),
            k: LinearF32::from_f64(&a.k.w, &a.k.b),
            v: LinearF32::from_f64(&a.v.w, &a.v.b),
            o: LinearF32::from_f64(&a.o.w, &a.o.b),
            fc1: LinearF32::from_f64(&b.fc1.w, &b.fc1.b),
            fc2: LinearF32::from_f64(&b.fc2.w, &b.fc2.b),
        }
    }
}

impl BlockF32 {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Block over `n` tokens stored row-major in `x`.
    pub fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let d = self.d;
        assert_eq!(x.len(), n * d);
        let a_in = layer_norm(x, d, &self.ln1.0, &self.ln1.1);
        let q = self.q.forward(&a_in, n);
        let k = self.k.forward(&a_in, n);
        let v = self.v.forward(&a_in, n);
        let concat = self.attention(&q, &k, &v, n);
        let mut h = self.o.forward(&concat, n);
        h.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        let m_in = layer_norm(&h, d, &self.ln2.0, &self.ln2.1);
        let mut act = self.fc1.forward(&m_in, n);
        act.iter_mut().for_each(|v| *v = gelu(*v));
        let mut y = self.fc2.forward(&act, n);
        y.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        y
    }

    fn attention(&self, q: &[f32], k: &[f32], v: &[f32], n: usize) -> Vec<f32> {
        let (d, heads) = (self.d, self.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut out = vec![0.0f32; n * d];
        let mut s = vec![0.0f32; KEY_TILE];
        let mut acc = vec![0.0f32; dh];
        for h in 0..heads {
            // Keys transposed to `dh × n` so the score loop runs over contiguous keys.
            let mut kt = vec![0.0f32; dh * n];
            let mut vh = vec![0.0f32; n * dh];
            for j in 0..n {
                for c in 0..dh {
                    kt[c * n + j] = k[j * d + h * dh + c];
                    vh[j * dh + c] = v[j * d + h * dh + c];
                }
            }
            for i in 0..n {
                let qi: Vec<f32> = q[i * d + h * dh..i * d + (h + 1) * dh]
                    .iter()
                    .map(|x| x * scale)
                    .collect();
                let (mut m, mut l) = (f32::NEG_INFINITY, 0.0f32);
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut j0 = 0;
                while j0 < n {
                    let len = KEY_TILE.min(n - j0);
                    let st = &mut s[..len];
                    st.iter_mut().for_each(|x| *x = 0.0);
                    for (c, qc) in qi.iter().enumerate() {
                        let row = &kt[c * n + j0..c * n + j0 + len];
                        for (x, kv) in st.iter_mut().zip(row) {
                            *x += qc * kv;
                        }
                    }
                    let mt = st.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let m_new = m.max(mt);
                    let corr = if m == f32::NEG_INFINITY {
                        0.0
                    } else {
                        fast_exp(m - m_new)
                    };
                    l *= corr;
                    acc.iter_mut().for_each(|a| *a *= corr);
                    st.iter_mut().for_each(|x| *x = fast_exp(*x - m_new));
                    l += st.iter().sum::<f32>();
                    for (jj, p) in st.iter().enumerate() {
                        let vr = &vh[(j0 + jj) * dh..(j0 + jj + 1) * dh];
                        for (a, vv) in acc.iter_mut().zip(vr) {
                            *a += p * vv;
                        }
                    }
                    m = m_new;
                    j0 += len;
                }
                let inv = 1.0 / l;
                for (o, a) in out[i * d + h * dh..i * d + (h + 1) * dh]
                    .iter_mut()
                    .zip(&acc)
                {
                    *o = a * inv;
                }
            }
        }
        out
    }

    /// Registration-guided block: `groups[t]` lists the token rows of UV token
    /// `t`'s group (the UV row first). Image rows average over their groups.
    pub fn forward_guided(
        &self,
        x: &[f32],
        n: usize,
        groups: &[Vec<usize>],
        n_uv: usize,
    ) -> Vec<f32> {
        let d = self.d;
        let mut acc = vec![0.0f32; n * d];
        let mut counts = vec![0u32; n];
        let mut buf = Vec::new();
        for g in groups {
            buf.clear();
            for &r in g {
                buf.extend_from_slice(&x[r * d..(r + 1) * d]);
            }
            let y = self.forward(&buf, g.len());
            for (o, &r) in g.iter().enumerate() {
                for (a, b) in acc[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(&y[o * d..(o + 1) * d])
                {
                    *a += b;
                }
                counts[r] += 1;
            }
        }
        let mut out = x.to_vec();
        for r in 0..n {
            if counts[r] == 0 {
                continue;
            }
            let inv = if r < n_uv {
                1.0
            } else {
                1.0 / counts[r] as f32
            };
            for (o, a) in out[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&acc[r * d..(r + 1) * d])
            {
                *o = a * inv;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub views: Vec<usize>,
    /// UV token grid (rows, cols).
    pub uv_tokens: [usize; 2],
    /// Image token grid per view (rows, cols).
    pub img_tokens: [usize; 2],
    pub k: usize,
    pub d: usize,
    pub heads: usize,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            views: vec![2, 4, 8, 12, 16],
            uv_tokens: [64, 64],
            img_tokens: [80, 64],
            k: 100,
            d: 16,
            heads: 1,
            runs: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.views.is_empty() || self.views.contains(&0) {
            return bad("views must be a non-empty list of positive counts");
        }
        if self.uv_tokens.contains(&0) || self.img_tokens.contains(&0) || self.k == 0 {
            return bad("token grids and k must be positive");
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.runs == 0 {
            return bad("runs must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub views: usize,
    pub dense_ms: f64,
    pub guided_ms: f64,
    /// `dense_ms / guided_ms`.
    pub ratio: f64,
}

pub const BENCH_CSV_HEADER: &str = "views,dense_ms,guided_ms,ratio";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.3},{:.3},{:.4}\n",
            r.views, r.dense_ms, r.guided_ms, r.ratio
        ));
    }
    s
}

/// Groups with `k` distinct image tokens drawn uniformly over all views.
pub fn synthetic_groups(n_uv: usize, n_img: usize, k: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let k = k.min(n_img);
    let mut pool: Vec<usize> = (0..n_img).collect();
    (0..n_uv)
        .map(|t| {
            let mut g = Vec::with_capacity(k + 1);
            g.push(t);
            for r in 0..k {
                let i = r + rng.below(n_img - r);
                pool.swap(r, i);
                g.push(n_uv + pool[r]);
            }
            g
        })
        .collect()
}

fn median_ms(runs: usize, warmup: usize, mut f: impl FnMut()) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut t: Vec<f64> = (0..runs)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

/// Times one dense block over all tokens and one registration-guided block
/// for every view count. Token contents and weights are random.
pub fn bench_attention(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rng = Rng::keyed(&[config.seed, 0xBE7C]);
    let block = BlockF32::from(&Block::new(config.d, config.heads, &mut rng));
    let n_uv = config.uv_tokens[0] * config.uv_tokens[1];
    let per_view = config.img_tokens[0] * config.img_tokens[1];
    let mut rows = Vec::with_capacity(config.views.len());
    for &v in &config.views {
        let mut rng = Rng::keyed(&[config.seed, 0xBE7C, v as u64]);
        let n = n_uv + v * per_view;
        let x: Vec<f32> = (0..n * config.d).map(|_| rng.normal() as f32).collect();
        let groups = synthetic_groups(n_uv, v * per_view, config.k, &mut rng);
        let dense_ms = median_ms(config.runs, config.warmup, || {
            std::hint::black_box(block.forward(std::hint::black_box(&x), n));
        });
        let guided_ms = median_ms(config.runs, config.warmup, || {
            std::hint::black_box(block.forward_guided(std::hint::black_box(&x), n, &groups, n_uv));
        });
        log::info!("V={v}: dense {dense_ms:.1} ms, guided {guided_ms:.1} ms");
        rows.push(BenchRow {
            views: v,
            dense_ms,
            guided_ms,
            ratio: dense_ms / guided_ms,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{Correspondence, CorrespondenceTable, TableRow};
    use crate::transformer::model::reg_guided_attention_block;

    #[test]
    fn fast_exp_is_accurate() {
        for i in 0..=8700 {
            let x = -(i as f32) * 0.01;
            let rel = ((fast_exp(x) as f64 - (x as f64).exp()) / (x as f64).exp()).abs();
            assert!(rel < 5e-7, "x={x}: {rel}");
        }
    }

    #[test]
    fn f32_block_matches_f64_block() {
        let mut rng = Rng::new(31);
        let block = Block::new(16, 4, &mut rng);
        let x = Mat::from_fn(300, 16, |_, _| rng.normal());
        let (want, _) = block.forward(&x);
        let xf: Vec<f32> = x.data.iter().map(|v| *v as f32).collect();
        let got = BlockF32::from(&block).forward(&xf, 300);
        let err = got
            .iter()
            .zip(&want.data)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn f32_guided_matches_f64_guided() {
        let mut rng = Rng::new(32);
        let block = Block::new(8, 2, &mut rng);
        let (n_uv, n_img) = (6, 20);
        let groups = synthetic_groups(n_uv, n_img, 5, &mut rng);
        let table = CorrespondenceTable {
            k: 5,
            views: 1,
            tokens_per_view: n_img,
            rows: groups
                .iter()
                .map(|g| TableRow {
                    entries: g[1..]
                        .iter()
                        .map(|&r| Correspondence {
                            view: 0,
                            token: (r - n_uv) as u32,
                            score: 1.0,
                        })
                        .collect(),
                    unobserved: false,
                })
                .collect(),
        };
        let x = Mat::from_fn(n_uv + n_img, 8, |_, _| rng.normal());
        let want = reg_guided_attention_block(&block, &x, &table, n_uv);
        let xf: Vec<f32> = x.data.iter().map(|v| *v as f32).collect();
        let got = BlockF32::from(&block).forward_guided(&xf, n_uv + n_img, &groups, n_uv);
        let err = got
            .iter()
            .zip(&want.data)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn csv_has_one_row_per_view_count() {
        let config = BenchConfig {
            views: vec![1, 2],
            uv_tokens: [2, 2],
            img_tokens: [2, 3],
            k: 3,
            d: 8,
            heads: 2,
            runs: 1,
            warmup: 0,
            seed: 1,
        };
        let rows = bench_attention(&config).unwrap();
        let csv = bench_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(BENCH_CSV_HEADER));
        assert!(rows.iter().all(|r| r.dense_ms >= 0.0 && r.guided_ms >= 0.0));
    }
}
