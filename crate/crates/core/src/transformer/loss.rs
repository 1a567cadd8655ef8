//! Training and evaluation losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::render::{l1_error, ssim};
use crate::texture::{channel, BakedTexture, GaussianTexture, GAUSSIAN_CHANNELS};

pub const SCALE_TARGET: f64 = 5e-4;
pub const OPACITY_TARGET: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_geometry: f64,
    pub w_reg: f64,
    pub w_l1: f64,
    pub w_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_geometry: 1e-3,
            w_reg: 1e-3,
            w_l1: 0.8,
            w_ssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_geometry", self.w_geometry),
            ("w_reg", self.w_reg),
            ("w_l1", self.w_l1),
            ("w_ssim", self.w_ssim),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn check_layout(g: &GaussianTexture, target: &BakedTexture) -> Result<()> {
    if g.height != target.height || g.width != target.width || target.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}×{} vs target {}×{}×{}",
            g.height, g.width, target.height, target.width, target.channels
        )));
    }
    Ok(())
}

/// Mean squared distance (m²) over texels valid in both prediction and target.
pub fn loss_geometry(g: &GaussianTexture, target: &BakedTexture) -> Result<f64> {
    geometry_with_grad(g, target, None)
}

/// As [`loss_geometry`], accumulating `scale · ∂L/∂position` into `d_texels`.
pub fn geometry_with_grad(
    g: &GaussianTexture,
    target: &BakedTexture,
    grad: Option<(f64, &mut [[f64; GAUSSIAN_CHANNELS]])>,
) -> Result<f64> {
    check_layout(g, target)?;
    let used = |t: usize| g.valid[t] && target.valid[t];
    let n = (0..g.texels.len()).filter(|&t| used(t)).count();
    if n == 0 {
        return Err(Error::NoValidTexels);
    }
    let mut sum = 0.0;
    let mut grad = grad;
    for t in (0..g.texels.len()).filter(|&t| used(t)) {
        let tp = &target.data[t * 3..t * 3 + 3];
        let p = &g.texels[t].position;
        for c in 0..3 {
            let d = p[c] - tp[c];
            sum += d * d;
            if let Some((s, dt)) = grad.as_mut() {
                dt[t][channel::POSITION + c] += *s * 2.0 * d / n as f64;
            }
        }
    }
    Ok(sum / n as f64)
}

/// Mean over valid texels of `‖s − s_t‖² + (α − α_t)²`.
pub fn loss_reg(g: &GaussianTexture, scale_t: f64, opacity_t: f64) -> Result<f64> {
    reg_with_grad(g, scale_t, opacity_t, None)
}

pub fn reg_with_grad(
    g: &GaussianTexture,
    scale_t: f64,
    opacity_t: f64,
    grad: Option<(f64, &mut [[f64; GAUSSIAN_CHANNELS]])>,
) -> Result<f64> {
    let n = g.valid_count();
    if n == 0 {
        return Err(Error::NoValidTexels);
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for (t, texel) in g.texels.iter().enumerate().filter(|(t, _)| g.valid[*t]) {
        for c in 0..3 {
            let d = texel.scale[c] - scale_t;
            sum += d * d;
            if let Some((s, dt)) = grad.as_mut() {
                dt[t][channel::SCALE + c] += *s * 2.0 * d * inv;
            }
        }
        let d = texel.opacity - opacity_t;
        sum += d * d;
        if let Some((s, dt)) = grad.as_mut() {
            dt[t][channel::OPACITY] += *s * 2.0 * d * inv;
        }
    }
    Ok(sum * inv)
}

/// `w_L1 · mean|Δ| + w_SSIM · (1 − SSIM)`, averaged over image pairs.
pub fn loss_photometric(
    rendered: &[RgbImage],
    target: &[RgbImage],
    w_l1: f64,
    w_ssim: f64,
) -> Result<f64> {
    if rendered.len() != target.len() || rendered.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} rendered vs {} target images",
            rendered.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (r, t) in rendered.iter().zip(target) {
        let mut l = w_l1 * l1_error(r, t)?;
        if w_ssim != 0.0 {
            l += w_ssim * (1.0 - ssim(r, t)?);
        }
        total += l;
    }
    Ok(total / rendered.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Rng;
    use crate::texture::TextureKind;

    fn random_texture(rng: &mut Rng, h: usize, w: usize) -> GaussianTexture {
        let mut g = GaussianTexture::new(h, w);
        for t in 0..h * w {
            g.valid[t] = rng.next_f64() > 0.25;
            let x = &mut g.texels[t];
            x.position = [rng.normal() * 0.1, rng.normal() * 0.1, rng.normal() * 0.1];
            x.scale = [
                rng.uniform(1e-4, 1e-2),
                rng.uniform(1e-4, 1e-2),
                rng.uniform(1e-4, 1e-2),
            ];
            x.opacity = rng.next_f64();
        }
        g
    }

    fn target_of(g: &GaussianTexture, offset: [f64; 3]) -> BakedTexture {
        let mut b =
            BakedTexture::new_invalid(g.height, g.width, 3, TextureKind::Position, f64::NAN);
        for t in 0..g.texels.len() {
            if g.valid[t] {
                b.valid[t] = true;
                for c in 0..3 {
                    b.data[t * 3 + c] = g.texels[t].position[c] - offset[c];
                }
            }
        }
        b
    }

    #[test]
    fn geometry_zero_and_constant_offset() {
        let mut rng = Rng::new(5);
        let g = random_texture(&mut rng, 6, 6);
        assert_eq!(loss_geometry(&g, &target_of(&g, [0.0; 3])).unwrap(), 0.0);
        let l = loss_geometry(&g, &target_of(&g, [1e-3, 0.0, 0.0])).unwrap();
        assert!((l - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn geometry_matches_loop_oracle() {
        let mut rng = Rng::new(6);
        let g = random_texture(&mut rng, 8, 8);
        let mut target = BakedTexture::new_invalid(8, 8, 3, TextureKind::Position, f64::NAN);
        for t in 0..64 {
            target.valid[t] = rng.next_f64() > 0.3;
            for c in 0..3 {
                target.data[t * 3 + c] = rng.normal() * 0.1;
            }
        }
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..8 {
            for j in 0..8 {
                if target.is_valid(i, j) && g.valid[i * 8 + j] {
                    let p = g.texel(i, j).position;
                    let q = target.texel(i, j);
                    s += (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    n += 1;
                }
            }
        }
        assert!((loss_geometry(&g, &target).unwrap() - s / n as f64).abs() < 1e-12);
    }

    #[test]
    fn geometry_without_overlap_is_an_error() {
        let g = GaussianTexture::new(2, 2);
        let target = target_of(&g, [0.0; 3]);
        assert!(matches!(
            loss_geometry(&g, &target),
            Err(Error::NoValidTexels)
        ));
        let bad = BakedTexture::new_invalid(3, 2, 3, TextureKind::Position, 0.0);
        assert!(matches!(
            loss_geometry(&g, &bad),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn reg_examples() {
        let mut g = GaussianTexture::new(3, 3);
        for t in 0..9 {
            g.valid[t] = true;
            g.texels[t].scale = [SCALE_TARGET; 3];
            g.texels[t].opacity = OPACITY_TARGET;
        }
        assert_eq!(loss_reg(&g, SCALE_TARGET, OPACITY_TARGET).unwrap(), 0.0);
        for t in &mut g.texels {
            t.opacity = 0.2;
        }
        assert!((loss_reg(&g, SCALE_TARGET, OPACITY_TARGET).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn reg_matches_loop_oracle() {
        let mut rng = Rng::new(7);
        let g = random_texture(&mut rng, 7, 5);
        let (mut s, mut n) = (0.0, 0.0);
        for (t, x) in g.texels.iter().enumerate() {
            if g.valid[t] {
                s += x.scale.iter().map(|v| (v - 5e-4).powi(2)).sum::<f64>()
                    + (x.opacity - 0.7).powi(2);
                n += 1.0;
            }
        }
        assert!((loss_reg(&g, 5e-4, 0.7).unwrap() - s / n).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(8);
        let g = random_texture(&mut rng, 4, 4);
        let mut target = target_of(&g, [0.01, -0.02, 0.005]);
        target
            .data
            .iter_mut()
            .for_each(|v| *v += 0.01 * rng.normal());
        let mut d = vec![[0.0; GAUSSIAN_CHANNELS]; 16];
        geometry_with_grad(&g, &target, Some((2.0, &mut d))).unwrap();
        reg_with_grad(&g, 5e-4, 0.7, Some((3.0, &mut d))).unwrap();
        let f = |g: &GaussianTexture| {
            2.0 * loss_geometry(g, &target).unwrap() + 3.0 * loss_reg(g, 5e-4, 0.7).unwrap()
        };
        for t in (0..16).filter(|&t| g.valid[t]) {
            for c in [
                channel::OPACITY,
                channel::POSITION,
                channel::POSITION + 2,
                channel::SCALE + 1,
            ] {
                let mut ch = g.texels[t].to_channels();
                let (mut gp, mut gm) = (g.clone(), g.clone());
                ch[c] += 1e-6;
                gp.texels[t] = crate::texture::Texel::from_channels(&ch);
                ch[c] -= 2e-6;
                gm.texels[t] = crate::texture::Texel::from_channels(&ch);
                let num = (f(&gp) - f(&gm)) / 2e-6;
                assert!(
                    (num - d[t][c]).abs() < 1e-7 * num.abs().max(1.0),
                    "{t},{c}: {num} vs {}",
                    d[t][c]
                );
            }
        }
    }

    fn oracle_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let k: Vec<f64> = (0..11)
            .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
            .collect();
        let ks: f64 = k.iter().sum::<f64>().powi(2);
        let (mut total, mut n) = (0.0, 0.0);
        for c in 0..3 {
            for y in 0..=a.height - 11 {
                for x in 0..=a.width - 11 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..11 {
                        for dx in 0..11 {
                            let w = k[dy] * k[dx] / ks;
                            let pa = a.pixel(x + dx, y + dy)[c];
                            let pb = b.pixel(x + dx, y + dy)[c];
                            ma += w * pa;
                            mb += w * pb;
                            saa += w * pa * pa;
                            sbb += w * pb * pb;
                            sab += w * pa * pb;
                        }
                    }
                    let (va, vb, cab) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    total += ((2.0 * ma * mb + 1e-4) * (2.0 * cab + 9e-4))
                        / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                    n += 1.0;
                }
            }
        }
        total / n
    }

    #[test]
    fn photometric_examples() {
        let a = RgbImage::filled(16, 16, [0.3, 0.5, 0.7]);
        assert_eq!(
            loss_photometric(&[a.clone()], &[a.clone()], 0.8, 0.2).unwrap(),
            0.0
        );
        let zero = RgbImage::filled(16, 16, [0.0; 3]);
        let one = RgbImage::filled(16, 16, [1.0; 3]);
        assert!((loss_photometric(&[one], &[zero], 0.8, 0.0).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn photometric_matches_independent_metrics() {
        let mut rng = Rng::new(9);
        let mut a = RgbImage::new(20, 18);
        let mut b = RgbImage::new(20, 18);
        a.data.iter_mut().for_each(|v| *v = rng.next_f64());
        b.data.iter_mut().for_each(|v| *v = rng.next_f64());
        let l1 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.data.len() as f64;
        let expected = 0.8 * l1 + 0.2 * (1.0 - oracle_ssim(&a, &b));
        assert!((loss_photometric(&[a], &[b], 0.8, 0.2).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            w_reg: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
