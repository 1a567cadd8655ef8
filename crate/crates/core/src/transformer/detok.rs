//! UV de-tokenisation: head output patches to Gaussian textures, applied as
//! offsets to the initial positions and colours.

use super::tensor::Mat;
use super::tokenize::InitSnapshot;
use crate::texture::{channel, GaussianTexture, Texel, GAUSSIAN_CHANNELS};

/// Scale bias `ln(5e-4)`: a zero raw scale maps to the regularisation target.
pub const SCALE_BIAS: f64 = -7.600902459542082;
const SCALE_TARGET: f64 = 5e-4;
/// Opacity logits are clamped here so that opacity stays strictly inside (0, 1).
const OPACITY_LOGIT_LIMIT: f64 = 16.0;
pub const LOG_SCALE_MIN: f64 = -12.0;
pub const LOG_SCALE_MAX: f64 = 1.0;
const ROTATION_MIN_NORM: f64 = 1e-8;

/// Column of texel `(i, j)`, channel `c` inside its token's head row.
#[inline]
fn raw_index(i: usize, j: usize, c: usize, p: usize, width: usize) -> (usize, usize) {
    let token = (i / p) * (width / p) + j / p;
    (token, ((i % p) * p + j % p) * GAUSSIAN_CHANNELS + c)
}

/// `exp(clamp(raw + b_s, −12, 1))`, evaluated as `5e-4 · exp(raw)` inside the
/// clamp range so that a zero raw value gives the target exactly.
pub fn scale_activation(raw: f64) -> f64 {
    SCALE_TARGET
        * raw
            .clamp(LOG_SCALE_MIN - SCALE_BIAS, LOG_SCALE_MAX - SCALE_BIAS)
            .exp()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Texture from raw head output. Only texels valid in `init` are produced.
pub fn detokenize(raw: &Mat, init: &InitSnapshot, p: usize, length_unit: f64) -> GaussianTexture {
    let (h, w) = (init.height, init.width);
    let mut g = GaussianTexture::new(h, w);
    for i in 0..h {
        for j in 0..w {
            let t = i * w + j;
            if !init.valid[t] {
                continue;
            }
            let (tok, base) = raw_index(i, j, 0, p, w);
            let r = &raw.row(tok)[base..base + GAUSSIAN_CHANNELS];
            let mut texel = Texel::default();
            for c in 0..3 {
                texel.color[c] = (init.colors[t][c] + r[channel::COLOR + c]).clamp(0.0, 1.0);
                texel.position[c] = init.positions[t][c] + r[channel::POSITION + c] * length_unit;
                texel.scale[c] = scale_activation(r[channel::SCALE + c]);
            }
            texel.opacity =
                sigmoid(r[channel::OPACITY].clamp(-OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT));
            let q = &r[channel::ROTATION..channel::ROTATION + 4];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            texel.rotation = if n < ROTATION_MIN_NORM {
                [1.0, 0.0, 0.0, 0.0]
            } else {
                [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
            };
            g.texels[t] = texel;
            g.valid[t] = true;
        }
    }
    g
}

/// Backpropagates per-texel channel gradients (`d_texels[t]` in texel
/// channel layout) to the raw head output.
pub fn detokenize_backward(
    raw: &Mat,
    init: &InitSnapshot,
    p: usize,
    length_unit: f64,
    out: &GaussianTexture,
    d_texels: &[[f64; GAUSSIAN_CHANNELS]],
) -> Mat {
    let (h, w) = (init.height, init.width);
    let mut d_raw = Mat::zeros(raw.rows, raw.cols);
    for i in 0..h {
        for j in 0..w {
            let t = i * w + j;
            if !init.valid[t] {
                continue;
            }
            let (tok, base) = raw_index(i, j, 0, p, w);
            let r = &raw.row(tok)[base..base + GAUSSIAN_CHANNELS];
            let dt = &d_texels[t];
            let texel = &out.texels[t];
            let dr = &mut d_raw.row_mut(tok)[base..base + GAUSSIAN_CHANNELS];
            for c in 0..3 {
                let col = init.colors[t][c] + r[channel::COLOR + c];
                if col > 0.0 && col < 1.0 {
                    dr[channel::COLOR + c] = dt[channel::COLOR + c];
                }
                dr[channel::POSITION + c] = dt[channel::POSITION + c] * length_unit;
                let z = r[channel::SCALE + c];
                if z > LOG_SCALE_MIN - SCALE_BIAS && z < LOG_SCALE_MAX - SCALE_BIAS {
                    dr[channel::SCALE + c] = dt[channel::SCALE + c] * texel.scale[c];
                }
            }
            if r[channel::OPACITY].abs() < OPACITY_LOGIT_LIMIT {
                let o = texel.opacity;
                dr[channel::OPACITY] = dt[channel::OPACITY] * o * (1.0 - o);
            }
            let q = &r[channel::ROTATION..channel::ROTATION + 4];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n >= ROTATION_MIN_NORM {
                let qh = texel.rotation;
                let dq = &dt[channel::ROTATION..channel::ROTATION + 4];
                let proj: f64 = qh.iter().zip(dq).map(|(a, b)| a * b).sum();
                for c in 0..4 {
                    dr[channel::ROTATION + c] = (dq[c] - qh[c] * proj) / n;
                }
            }
        }
    }
    d_raw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Rng;

    fn snapshot(h: usize, w: usize, rng: &mut Rng) -> InitSnapshot {
        InitSnapshot {
            height: h,
            width: w,
            positions: (0..h * w)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect(),
            colors: (0..h * w)
                .map(|_| {
                    [
                        rng.uniform(0.1, 0.9),
                        rng.uniform(0.1, 0.9),
                        rng.uniform(0.1, 0.9),
                    ]
                })
                .collect(),
            valid: (0..h * w).map(|_| rng.next_f64() > 0.2).collect(),
        }
    }

    #[test]
    fn scale_bias_is_log_of_target() {
        assert_eq!(SCALE_BIAS, (5e-4f64).ln());
        assert_eq!(scale_activation(0.0), 5e-4);
        assert!((scale_activation(100.0) - 1f64.exp()).abs() < 1e-12);
        assert!((scale_activation(-100.0) - (-12f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn zero_head_returns_initialisation() {
        let mut rng = Rng::new(1);
        let init = snapshot(4, 4, &mut rng);
        let g = detokenize(&Mat::zeros(4, 4 * GAUSSIAN_CHANNELS), &init, 2, 0.01);
        for t in 0..16 {
            assert_eq!(g.valid[t], init.valid[t]);
            if init.valid[t] {
                let x = &g.texels[t];
                assert_eq!(x.position, init.positions[t]);
                assert_eq!(x.color, init.colors[t]);
                assert_eq!(x.opacity, 0.5);
                assert_eq!(x.scale, [5e-4; 3]);
                assert_eq!(x.rotation, [1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn assembly_matches_patch_scatter() {
        let mut rng = Rng::new(2);
        let (h, w, p) = (4, 4, 2);
        let mut init = snapshot(h, w, &mut rng);
        init.valid = vec![true; 16];
        let raw = Mat::from_fn(4, p * p * 14, |_, _| rng.normal());
        let g = detokenize(&raw, &init, p, 1.0);
        for ti in 0..2 {
            for tj in 0..2 {
                for a in 0..p {
                    for b in 0..p {
                        let (i, j) = (ti * p + a, tj * p + b);
                        let r = &raw.row(ti * 2 + tj)[(a * p + b) * 14..(a * p + b + 1) * 14];
                        let x = g.texel(i, j);
                        let t = i * w + j;
                        assert_eq!(x.position[1], init.positions[t][1] + r[5]);
                        assert!((x.opacity - 1.0 / (1.0 + (-r[3]).exp())).abs() < 1e-15);
                    }
                }
            }
        }
        g.check_invariants().unwrap();
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let (h, w, p) = (4, 4, 2);
        let init = snapshot(h, w, &mut rng);
        let raw = Mat::from_fn(4, p * p * 14, |_, _| 0.3 * rng.normal());
        let weights: Vec<[f64; 14]> = (0..16)
            .map(|_| std::array::from_fn(|_| rng.normal()))
            .collect();
        let loss = |raw: &Mat| -> f64 {
            let g = detokenize(raw, &init, p, 0.5);
            g.texels
                .iter()
                .zip(&g.valid)
                .zip(&weights)
                .filter(|((_, v), _)| **v)
                .map(|((t, _), wt)| {
                    t.to_channels()
                        .iter()
                        .zip(wt)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum()
        };
        let g = detokenize(&raw, &init, p, 0.5);
        let d = detokenize_backward(&raw, &init, p, 0.5, &g, &weights);
        for e in 0..raw.data.len() {
            let (mut rp, mut rm) = (raw.clone(), raw.clone());
            rp.data[e] += 1e-6;
            rm.data[e] -= 1e-6;
            let num = (loss(&rp) - loss(&rm)) / 2e-6;
            assert!(
                (num - d.data[e]).abs() < 1e-6 * num.abs().max(1.0),
                "entry {e}: {num} vs {}",
                d.data[e]
            );
        }
    }

    #[test]
    fn outputs_always_satisfy_ranges() {
        let mut rng = Rng::new(4);
        let init = snapshot(4, 4, &mut rng);
        let raw = Mat::from_fn(4, 56, |_, _| 40.0 * rng.normal());
        detokenize(&raw, &init, 2, 1.0).check_invariants().unwrap();
    }
}
