use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Side length of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub l2: f64,
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "images {}×{} and {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn l1_error(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.data.len() as f64)
}

fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

/// Capped at 99 dB when the MSE is below `1e-10`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    Ok(psnr_from_mse(mse(a, b)))
}

fn psnr_from_mse(m: f64) -> f64 {
    if m < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 'valid' filtering of a single-channel plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (width + 1 - SSIM_WINDOW, height + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW)
                .map(|k| win[k] * plane[y * width + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|k| win[k] * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over 'valid' window positions, averaged over channels. Both
/// sides must be at least `SSIM_WINDOW` pixels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(c).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(c).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &win));
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2))
                / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn image_metrics(a: &RgbImage, b: &RgbImage) -> Result<ImageMetrics> {
    check_dims(a, b)?;
    let l2 = mse(a, b);
    Ok(ImageMetrics {
        psnr: psnr_from_mse(l2),
        ssim: ssim(a, b)?,
        l1: l1_error(a, b)?,
        l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut s = seed;
        let mut img = RgbImage::new(w, h);
        for v in &mut img.data {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64;
        }
        img
    }

    /// Direct windowed SSIM without separability.
    fn ssim_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
        let mut g = [[0.0; 11]; 11];
        let mut gs = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                gs += *v;
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for y0 in 0..=a.height - 11 {
                for x0 in 0..=a.width - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = g[i][j] / gs;
                            let p = a.pixel(x0 + j, y0 + i)[c];
                            let q = b.pixel(x0 + j, y0 + i)[c];
                            mx += w * p;
                            my += w * q;
                            sxx += w * p * p;
                            syy += w * q * q;
                            sxy += w * p * q;
                        }
                    }
                    let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += ((2.0 * mx * my + 1e-4) * (2.0 * cxy + 9e-4))
                        / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                    cnt += 1.0;
                }
            }
            total += acc / cnt;
        }
        total / 3.0
    }

    #[test]
    fn identical_images() {
        let a = noise_image(20, 16, 3);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!(
            m,
            ImageMetrics {
                psnr: 99.0,
                ssim: 1.0,
                l1: 0.0,
                l2: 0.0
            }
        );
    }

    #[test]
    fn uniform_mse_of_one_hundredth_is_20_db() {
        let a = RgbImage::filled(16, 16, [0.5; 3]);
        let b = RgbImage::filled(16, 16, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn random_pair_matches_reference() {
        let a = noise_image(23, 17, 1);
        let b = noise_image(23, 17, 2);
        let m = image_metrics(&a, &b).unwrap();
        let n = a.data.len() as f64;
        let l1: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        let l2: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n;
        assert!((m.l1 - l1).abs() < 1e-9);
        assert!((m.l2 - l2).abs() < 1e-9);
        assert!((m.psnr + 10.0 * l2.log10()).abs() < 1e-9);
        assert!((m.ssim - ssim_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_errors() {
        assert!(image_metrics(&RgbImage::new(12, 12), &RgbImage::new(12, 13)).is_err());
    }
}
