//! Joint PCA over flattened Gaussian textures with per-attribute-class RMS
//! standardisation, and the linear reconstruction / projection pair.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::texture::{Attribute, GaussianTexture, Texel, GAUSSIAN_CHANNELS};

pub const MIN_OPACITY: f64 = 1e-4;
pub const MAX_OPACITY: f64 = 1.0 - 1e-4;
pub const MIN_SCALE: f64 = 1e-6;
/// Components whose variance falls below this fraction of the largest are
/// treated as absent.
const MIN_RELATIVE_VARIANCE: f64 = 1e-20;

/// Whether channel `c` of a static texel is frozen to the mean.
fn frozen_channel(c: usize) -> bool {
    matches!(
        Attribute::of_channel(c),
        Attribute::Color | Attribute::Opacity | Attribute::Scale
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct GemModel {
    pub height: usize,
    pub width: usize,
    pub valid: Vec<bool>,
    /// Texels whose colour, opacity and scale are pinned to the mean.
    pub static_mask: Vec<bool>,
    /// RMS deviation per attribute class; flattened values are divided by it.
    pub class_scale: [f64; 5],
    /// Standardised mean, length `D = valid texels · 14`.
    pub mean: Vec<f64>,
    /// `K` orthonormal columns of length `D`.
    pub basis: Vec<Vec<f64>>,
    /// Sample variance explained by each column.
    pub variances: Vec<f64>,
}

impl GemModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    fn valid_texels(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(t, _)| t)
    }

    /// Flat indices that take part in the decomposition (not frozen).
    pub fn active(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.dim());
        for t in self.valid_texels() {
            for c in 0..GAUSSIAN_CHANNELS {
                out.push(!(self.static_mask[t] && frozen_channel(c)));
            }
        }
        out
    }

    fn check_layout(&self, g: &GaussianTexture) -> Result<()> {
        if g.height != self.height || g.width != self.width || g.valid != self.valid {
            return Err(Error::LayoutMismatch(
                "texture validity or size differs from the model".into(),
            ));
        }
        Ok(())
    }

    /// Standardised flat vector of `g`.
    pub fn standardize(&self, g: &GaussianTexture) -> Result<Vec<f64>> {
        self.check_layout(g)?;
        Ok(flatten(g, &self.class_scale))
    }

    /// `μ + B·k` in standardised space, before clamping.
    pub fn reconstruct_flat(&self, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} components",
                k.len(),
                self.k()
            )));
        }
        let mut z = self.mean.clone();
        for (b, kk) in self.basis.iter().zip(k) {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += kk * bi;
            }
        }
        Ok(z)
    }

    /// Texture for coefficients `k`: static channels take the mean exactly,
    /// opacity is clamped to `[1e-4, 1 − 1e-4]`, scales floored at `1e-6`,
    /// colours clamped to `[0, 1]`, rotations renormalised.
    pub fn reconstruct(&self, k: &[f64]) -> Result<GaussianTexture> {
        let z = self.reconstruct_flat(k)?;
        let mut g = GaussianTexture::new(self.height, self.width);
        for (n, t) in self.valid_texels().enumerate() {
            let mut ch = [0.0; GAUSSIAN_CHANNELS];
            for c in 0..GAUSSIAN_CHANNELS {
                let i = n * GAUSSIAN_CHANNELS + c;
                let v = if self.static_mask[t] && frozen_channel(c) {
                    self.mean[i]
                } else {
                    z[i]
                };
                ch[c] = v * self.class_scale[Attribute::of_channel(c).index()];
            }
            g.texels[t] = clamp_texel(Texel::from_channels(&ch));
            g.valid[t] = true;
        }
        Ok(g)
    }

    /// Least-squares coefficients `Bᵀ(standardize(g) − μ)`.
    pub fn fit_coefficients(&self, g: &GaussianTexture) -> Result<Vec<f64>> {
        let z = self.standardize(g)?;
        Ok(self
            .basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(z.iter().zip(&self.mean))
                    .map(|(bi, (zi, mi))| bi * (zi - mi))
                    .sum()
            })
            .collect())
    }

    /// RMS standardised residual of the best reconstruction of `g` over
    /// the non-frozen entries.
    pub fn reconstruction_error(&self, g: &GaussianTexture) -> Result<f64> {
        let z = self.standardize(g)?;
        let r = self.reconstruct_flat(&self.fit_coefficients(g)?)?;
        let active = self.active();
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..z.len() {
            if active[i] {
                s += (z[i] - r[i]).powi(2);
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { (s / n as f64).sqrt() })
    }

    /// The first `k` components.
    pub fn truncated(&self, k: usize) -> Result<GemModel> {
        if k > self.k() {
            return Err(Error::InvalidInput(format!(
                "cannot keep {k} of {} components",
                self.k()
            )));
        }
        let mut m = self.clone();
        m.basis.truncate(k);
        m.variances.truncate(k);
        Ok(m)
    }

    /// One fixed-point pass: the mean becomes the average of the clamped
    /// reconstructions of `frames`.
    pub fn refine_mean(&mut self, frames: &[GaussianTexture]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("mean refinement needs frames".into()));
        }
        let mut acc = vec![0.0; self.dim()];
        for g in frames {
            let r = self.reconstruct(&self.fit_coefficients(g)?)?;
            for (a, v) in acc.iter_mut().zip(flatten(&r, &self.class_scale)) {
                *a += v;
            }
        }
        let inv = 1.0 / frames.len() as f64;
        self.mean = acc.into_iter().map(|a| a * inv).collect();
        Ok(())
    }

    /// Text header then little-endian `f32` blocks: validity and static
    /// masks as bytes, the mean, and the basis column by column.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        write!(
            w,
            "SPLATEX-GEM\nversion 1\nheight {}\nwidth {}\ndim {}\ncomponents {}\nclass_scale {}\nvariances {}\nend_header\n",
            self.height,
            self.width,
            self.dim(),
            self.k(),
            join(&self.class_scale),
            join(&self.variances)
        )?;
        let mut buf = Vec::new();
        buf.extend(self.valid.iter().map(|v| *v as u8));
        buf.extend(self.static_mask.iter().map(|v| *v as u8));
        for v in self.mean.iter().chain(self.basis.iter().flatten()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::format("GEM model", m);
        let mut r = BufReader::new(r);
        let mut fields = std::collections::HashMap::new();
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != "SPLATEX-GEM" {
            return Err(bad("missing magic line".into()));
        }
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("header not terminated".into()));
            }
            let l = line.trim_end();
            if l == "end_header" {
                break;
            }
            let (k, v) = l.split_once(' ').unwrap_or((l, ""));
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing {k}")));
        let num =
            |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(format!("bad {k}"))))
                .collect()
        };
        if get("version")? != "1" {
            return Err(bad("unsupported version".into()));
        }
        let (height, width, dim, k) = (
            num("height")?,
            num("width")?,
            num("dim")?,
            num("components")?,
        );
        let cs = floats("class_scale")?;
        let variances = floats("variances")?;
        if cs.len() != 5 || variances.len() != k {
            return Err(bad("header vector lengths".into()));
        }
        let n = height * width;
        let mut masks = vec![0u8; 2 * n];
        r.read_exact(&mut masks)
            .map_err(|_| bad("truncated masks".into()))?;
        let mut data = vec![0u8; dim * (k + 1) * 4];
        r.read_exact(&mut data)
            .map_err(|_| bad("truncated data".into()))?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing data".into()));
        }
        let vals: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let valid: Vec<bool> = masks[..n].iter().map(|b| *b != 0).collect();
        if valid.iter().filter(|v| **v).count() * GAUSSIAN_CHANNELS != dim {
            return Err(bad("dimension does not match the validity mask".into()));
        }
        Ok(Self {
            height,
            width,
            valid,
            static_mask: masks[n..].iter().map(|b| *b != 0).collect(),
            class_scale: [cs[0], cs[1], cs[2], cs[3], cs[4]],
            mean: vals[..dim].to_vec(),
            basis: vals[dim..]
                .chunks_exact(dim.max(1))
                .take(k)
                .map(|c| c.to_vec())
                .collect(),
            variances,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

fn clamp_texel(mut t: Texel) -> Texel {
    for c in &mut t.color {
        *c = c.clamp(0.0, 1.0);
    }
    t.opacity = t.opacity.clamp(MIN_OPACITY, MAX_OPACITY);
    for s in &mut t.scale {
        *s = s.max(MIN_SCALE);
    }
    let n = t.rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
    t.rotation = if n > 1e-12 {
        t.rotation.map(|x| x / n)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    };
    t
}

fn flatten(g: &GaussianTexture, class_scale: &[f64; 5]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.valid_count() * GAUSSIAN_CHANNELS);
    for (t, v) in g.texels.iter().zip(&g.valid) {
        if *v {
            for (c, x) in t.to_channels().iter().enumerate() {
                out.push(x / class_scale[Attribute::of_channel(c).index()]);
            }
        }
    }
    out
}

/// Joint PCA over `frames` (identical validity masks). Returns the top `k`
/// components of the standardised, centred data; frozen channels of
/// `static_mask` texels carry no variance.
pub fn pca_fit(
    frames: &[GaussianTexture],
    k: usize,
    static_mask: Option<&[bool]>,
) -> Result<GemModel> {
    let n = frames.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 frames, got {n}"
        )));
    }
    if k > n - 1 {
        return Err(Error::InvalidInput(format!(
            "K = {k} exceeds N − 1 = {}",
            n - 1
        )));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    if frames
        .iter()
        .any(|f| f.height != h || f.width != w || f.valid != frames[0].valid)
    {
        return Err(Error::LayoutMismatch(
            "frames must share size and validity mask".into(),
        ));
    }
    let static_mask = static_mask
        .map(|m| m.to_vec())
        .unwrap_or_else(|| vec![false; h * w]);
    if static_mask.len() != h * w {
        return Err(Error::DimensionMismatch(
            "static mask size differs from the textures".into(),
        ));
    }
    let mut model = GemModel {
        height: h,
        width: w,
        valid: frames[0].valid.clone(),
        static_mask,
        class_scale: [1.0; 5],
        mean: Vec::new(),
        basis: Vec::new(),
        variances: Vec::new(),
    };
    let raw: Vec<Vec<f64>> = frames.iter().map(|f| flatten(f, &[1.0; 5])).collect();
    let d = raw[0].len();
    let raw_mean: Vec<f64> = (0..d)
        .map(|i| raw.iter().map(|r| r[i]).sum::<f64>() / n as f64)
        .collect();
    let active = model.active();
    let (mut ss, mut cnt) = ([0.0f64; 5], [0usize; 5]);
    for r in &raw {
        for i in 0..d {
            if active[i] {
                let c = Attribute::of_channel(i % GAUSSIAN_CHANNELS).index();
                ss[c] += (r[i] - raw_mean[i]).powi(2);
                cnt[c] += 1;
            }
        }
    }
    for c in 0..5 {
        let rms = if cnt[c] > 0 {
            (ss[c] / cnt[c] as f64).sqrt()
        } else {
            0.0
        };
        model.class_scale[c] = if rms > 1e-12 { rms } else { 1.0 };
    }
    let scale_of =
        |i: usize| model.class_scale[Attribute::of_channel(i % GAUSSIAN_CHANNELS).index()];
    model.mean = (0..d).map(|i| raw_mean[i] / scale_of(i)).collect();
    // Centred rows with frozen entries zeroed.
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            (0..d)
                .map(|i| {
                    if active[i] {
                        r[i] / scale_of(i) - model.mean[i]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let gram = DMatrix::from_fn(n, n, |a, b| {
        x[a].iter().zip(&x[b]).map(|(p, q)| p * q).sum::<f64>()
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::Degenerate("all frames are identical".into()));
    }
    for &j in order.iter().take(k) {
        let lambda = eig.eigenvalues[j];
        if lambda <= top * MIN_RELATIVE_VARIANCE {
            return Err(Error::Degenerate(format!(
                "only {} components carry variance",
                model.basis.len()
            )));
        }
        let u = eig.eigenvectors.column(j);
        let mut b = vec![0.0; d];
        for (a, xa) in x.iter().enumerate() {
            for (bi, xi) in b.iter_mut().zip(xa) {
                *bi += u[a] * xi;
            }
        }
        // Re-orthogonalise against earlier columns, then normalise.
        for _ in 0..2 {
            for prev in &model.basis {
                let p: f64 = prev.iter().zip(&b).map(|(a, c)| a * c).sum();
                b.iter_mut().zip(prev).for_each(|(bi, pi)| *bi -= p * pi);
            }
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            b.iter_mut().for_each(|v| *v /= norm);
        }
        let imax = (0..d).fold(0, |m, i| if b[i].abs() > b[m].abs() { i } else { m });
        if b[imax] < 0.0 {
            b.iter_mut().for_each(|v| *v = -*v);
        }
        model.basis.push(b);
        model.variances.push(lambda / (n - 1) as f64);
    }
    Ok(model)
}

pub fn gem_reconstruct(model: &GemModel, k: &[f64]) -> Result<GaussianTexture> {
    model.reconstruct(k)
}

pub fn fit_coefficients(model: &GemModel, g: &GaussianTexture) -> Result<Vec<f64>> {
    model.fit_coefficients(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Rng;

    fn random_frames(n: usize, h: usize, w: usize, seed: u64) -> Vec<GaussianTexture> {
        let mut rng = Rng::new(seed);
        let valid: Vec<bool> = (0..h * w).map(|t| t % 5 != 2).collect();
        (0..n)
            .map(|_| {
                let mut g = GaussianTexture::new(h, w);
                g.valid = valid.clone();
                for t in &mut g.texels {
                    t.color = [
                        rng.uniform(0.2, 0.8),
                        rng.uniform(0.2, 0.8),
                        rng.uniform(0.2, 0.8),
                    ];
                    t.opacity = rng.uniform(0.3, 0.9);
                    t.position = [0.1 * rng.normal(), 0.1 * rng.normal(), 0.1 * rng.normal()];
                    t.scale = [
                        rng.uniform(1e-3, 5e-3),
                        rng.uniform(1e-3, 5e-3),
                        rng.uniform(1e-3, 5e-3),
                    ];
                    let q = [
                        1.0 + 0.1 * rng.normal(),
                        0.1 * rng.normal(),
                        0.1 * rng.normal(),
                        0.1 * rng.normal(),
                    ];
                    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                    t.rotation = q.map(|x| x / qn);
                }
                g
            })
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn full_rank_reconstructs_training_frames() {
        let frames = random_frames(6, 5, 4, 1);
        let m = pca_fit(&frames, 5, None).unwrap();
        for f in &frames {
            assert!(m.reconstruction_error(f).unwrap() < 1e-10);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_sign_fixed() {
        let frames = random_frames(7, 6, 6, 2);
        let m = pca_fit(&frames, 6, None).unwrap();
        for (i, a) in m.basis.iter().enumerate() {
            for (j, b) in m.basis.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - (i == j) as u8 as f64).abs() < 1e-8);
            }
            let big = a
                .iter()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(big > 0.0);
        }
        assert!(m.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn two_frames_give_the_difference_direction() {
        let frames = random_frames(2, 3, 3, 3);
        let m = pca_fit(&frames, 1, None).unwrap();
        let a = m.standardize(&frames[0]).unwrap();
        let b = m.standardize(&frames[1]).unwrap();
        let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let n = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos: f64 = diff
            .iter()
            .zip(&m.basis[0])
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / n;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    /// Covariance eigenvalues by cyclic Jacobi rotations on the dense `D × D`
    /// standardised covariance.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn variances_match_dense_covariance_eigenvalues() {
        let frames = random_frames(5, 2, 2, 4);
        let m = pca_fit(&frames, 4, None).unwrap();
        let z: Vec<Vec<f64>> = frames.iter().map(|f| m.standardize(f).unwrap()).collect();
        let d = m.dim();
        let mean: Vec<f64> = (0..d)
            .map(|i| z.iter().map(|r| r[i]).sum::<f64>() / 5.0)
            .collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        z.iter()
                            .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                            .sum::<f64>()
                            / 4.0
                    })
                    .collect()
            })
            .collect();
        let ev = jacobi_eigenvalues(cov);
        for (a, b) in m.variances.iter().zip(&ev) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(ev[4..].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn error_is_non_increasing_in_k() {
        let frames = random_frames(8, 4, 4, 5);
        let full = pca_fit(&frames, 7, None).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=7 {
            let m = full.truncated(k).unwrap();
            let e: f64 = frames
                .iter()
                .map(|f| m.reconstruction_error(f).unwrap().powi(2))
                .sum();
            assert!(e <= prev + 1e-12, "K={k}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn zero_coefficients_give_the_mean_and_reconstruction_is_affine() {
        let frames = random_frames(5, 3, 4, 6);
        let m = pca_fit(&frames, 3, None).unwrap();
        assert_eq!(m.reconstruct_flat(&[0.0; 3]).unwrap(), m.mean);
        let (k1, k2) = ([0.3, -1.0, 0.2], [-0.5, 0.25, 2.0]);
        let r1 = m.reconstruct_flat(&k1).unwrap();
        let r2 = m.reconstruct_flat(&k2).unwrap();
        let r0 = m.reconstruct_flat(&[0.0; 3]).unwrap();
        let r12 = m
            .reconstruct_flat(&[k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2]])
            .unwrap();
        let lhs: Vec<f64> = (0..r0.len()).map(|i| r1[i] + r2[i] - r0[i]).collect();
        assert!(max_abs_diff(&lhs, &r12) < 1e-12);
        m.reconstruct(&k1).unwrap().check_invariants().unwrap();
        m.reconstruct(&[50.0, -80.0, 30.0])
            .unwrap()
            .check_invariants()
            .unwrap();
    }

    #[test]
    fn projection_round_trips_and_is_least_squares() {
        let frames = random_frames(6, 3, 3, 7);
        let m = pca_fit(&frames, 4, None).unwrap();
        let k = [0.1, -0.2, 0.05, 0.3];
        let z = m.reconstruct_flat(&k).unwrap();
        // Project a flat vector directly: Bᵀ(z − μ).
        let fit: Vec<f64> = m
            .basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(z.iter().zip(&m.mean))
                    .map(|(bi, (zi, mi))| bi * (zi - mi))
                    .sum()
            })
            .collect();
        assert!(max_abs_diff(&fit, &k) < 1e-10);
        // The unclamped mean texture projects to zero.
        let mut mean_tex = frames[0].clone();
        for (n, t) in mean_tex
            .valid
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(t, _)| t)
            .collect::<Vec<_>>()
            .into_iter()
            .enumerate()
        {
            let ch: Vec<f64> = (0..GAUSSIAN_CHANNELS)
                .map(|c| {
                    m.mean[n * GAUSSIAN_CHANNELS + c]
                        * m.class_scale[Attribute::of_channel(c).index()]
                })
                .collect();
            mean_tex.texels[t] = Texel::from_channels(&ch);
        }
        assert!(m
            .fit_coefficients(&mean_tex)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-9));
        // Normal equations (BᵀB)k = Bᵀ(z − μ) solved densely.
        let target = m.standardize(&frames[0]).unwrap();
        let kk = m.k();
        let bt_b = DMatrix::from_fn(kk, kk, |i, j| {
            m.basis[i]
                .iter()
                .zip(&m.basis[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
        });
        let rhs = nalgebra::DVector::from_fn(kk, |i, _| {
            m.basis[i]
                .iter()
                .zip(target.iter().zip(&m.mean))
                .map(|(b, (t, mu))| b * (t - mu))
                .sum::<f64>()
        });
        let solved = bt_b.lu().solve(&rhs).unwrap();
        let got = m.fit_coefficients(&frames[0]).unwrap();
        for i in 0..kk {
            assert!((solved[i] - got[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn static_texels_keep_the_mean() {
        let frames = random_frames(5, 3, 3, 8);
        let mask: Vec<bool> = (0..9).map(|t| t == 0 || t == 4).collect();
        let m = pca_fit(&frames, 4, Some(&mask)).unwrap();
        let r = m.reconstruct(&[1.0, -2.0, 0.5, 0.1]).unwrap();
        let mean = m.reconstruct(&[0.0; 4]).unwrap();
        for t in [0, 4] {
            assert_eq!(r.texels[t].color, mean.texels[t].color);
            assert_eq!(r.texels[t].opacity, mean.texels[t].opacity);
            assert_eq!(r.texels[t].scale, mean.texels[t].scale);
        }
        for b in &m.basis {
            for (i, active) in m.active().iter().enumerate() {
                if !active {
                    assert_eq!(b[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let frames = random_frames(3, 2, 2, 9);
        assert!(pca_fit(&frames[..1], 0, None).is_err());
        assert!(pca_fit(&frames, 3, None).is_err());
        let same = vec![frames[0].clone(), frames[0].clone()];
        assert!(matches!(pca_fit(&same, 1, None), Err(Error::Degenerate(_))));
        let mut other = frames[1].clone();
        other.valid[0] = !other.valid[0];
        assert!(matches!(
            pca_fit(&[frames[0].clone(), other], 1, None),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn mean_refinement_keeps_reconstructions_valid() {
        let frames = random_frames(5, 3, 3, 10);
        let mut m = pca_fit(&frames, 2, None).unwrap();
        let before = m.mean.clone();
        m.refine_mean(&frames).unwrap();
        assert_eq!(m.mean.len(), before.len());
        m.reconstruct(&[0.0, 0.0])
            .unwrap()
            .check_invariants()
            .unwrap();
    }

    #[test]
    fn file_round_trip_within_f32() {
        let frames = random_frames(4, 3, 3, 11);
        let m = pca_fit(
            &frames,
            2,
            Some(&[true, false, false, false, false, false, false, false, true]),
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let r = GemModel::read(buf.as_slice()).unwrap();
        assert_eq!(
            (
                r.valid.clone(),
                r.static_mask.clone(),
                r.class_scale,
                r.variances.clone()
            ),
            (
                m.valid.clone(),
                m.static_mask.clone(),
                m.class_scale,
                m.variances.clone()
            )
        );
        assert!(max_abs_diff(&r.mean, &m.mean) < 1e-5);
        for (a, b) in r.basis.iter().zip(&m.basis) {
            assert!(max_abs_diff(a, b) < 1e-6);
        }
        assert!(GemModel::read(&buf[..buf.len() - 2]).is_err());
    }
}
