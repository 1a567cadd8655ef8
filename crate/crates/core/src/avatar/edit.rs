//! Texel-space editing: interpolation, feathered region swap, and residual
//! expression transfer. All operators rely on texel `(i, j)` meaning the same
//! surface point in every texture.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::pca::{MAX_OPACITY, MIN_OPACITY, MIN_SCALE};
use crate::error::{Error, Result};
use crate::image::read_pnm_header;
use crate::math::UnitQuaternion;
use crate::texture::{GaussianTexture, Texel};

/// Per-texel flag over a UV grid, stored as an 8-bit PGM (nonzero = set).
#[derive(Clone, Debug, PartialEq)]
pub struct TexelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl TexelMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    /// Axis-aligned texel rectangle `[i0, i1) × [j0, j1)`.
    pub fn rect(height: usize, width: usize, i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        let mut m = Self::new(height, width);
        for i in i0..i1.min(height) {
            for j in j0..j1.min(width) {
                m.data[i * width + j] = true;
            }
        }
        m
    }

    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|b| if *b { 255 } else { 0 }).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_pgm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let t = read_pnm_header(&mut r, 4)?;
        if t[0] != "P5" {
            return Err(Error::format("pgm", "expected P5 magic"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format("pgm", "bad header number"))
        };
        let (width, height, maxval) = (parse(&t[1])?, parse(&t[2])?, parse(&t[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::format("pgm", "only 8-bit PGM is supported"));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format("pgm", "truncated pixel data"))?;
        Ok(Self {
            height,
            width,
            data: bytes.iter().map(|b| *b != 0).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

fn check_same_size(a: &GaussianTexture, b: &GaussianTexture) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::LayoutMismatch(format!(
            "{}×{} vs {}×{} textures",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    UnitQuaternion::new_normalize(q[0], q[1], q[2], q[3]).to_array()
}

/// Channel-wise blend with a hemisphere-aligned normalised quaternion lerp.
pub fn lerp_texel(a: &Texel, b: &Texel, gamma: f64) -> Texel {
    let mix = |x: f64, y: f64| (1.0 - gamma) * x + gamma * y;
    let dot: f64 = a.rotation.iter().zip(&b.rotation).map(|(x, y)| x * y).sum();
    let sb = if dot < 0.0 { -1.0 } else { 1.0 };
    let mut q = [0.0; 4];
    for k in 0..4 {
        q[k] = mix(a.rotation[k], sb * b.rotation[k]);
    }
    Texel {
        color: [0, 1, 2].map(|k| mix(a.color[k], b.color[k])),
        opacity: mix(a.opacity, b.opacity),
        position: [0, 1, 2].map(|k| mix(a.position[k], b.position[k])),
        scale: [0, 1, 2].map(|k| mix(a.scale[k], b.scale[k])),
        rotation: normalize_quat(q),
    }
}

/// Blend `g_a → g_b` by `gamma`; the ends return the inputs unchanged. The
/// result is valid where both inputs are.
pub fn interpolate(
    g_a: &GaussianTexture,
    g_b: &GaussianTexture,
    gamma: f64,
) -> Result<GaussianTexture> {
    check_same_size(g_a, g_b)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!(
            "interpolation factor {gamma} outside [0, 1]"
        )));
    }
    if gamma == 0.0 {
        return Ok(g_a.clone());
    }
    if gamma == 1.0 {
        return Ok(g_b.clone());
    }
    let mut out = g_a.clone();
    for t in 0..out.texels.len() {
        out.valid[t] = g_a.valid[t] && g_b.valid[t];
        out.texels[t] = lerp_texel(&g_a.texels[t], &g_b.texels[t], gamma);
    }
    Ok(out)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Euclidean texel distance from each texel to the nearest set texel of
/// `mask`, searched within `radius`; `None` beyond it.
fn mask_distance(mask: &TexelMask, radius: usize) -> Vec<Option<f64>> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![None; h * w];
    let r = radius as isize;
    for i in 0..h {
        for j in 0..w {
            if mask.data[i * w + j] {
                out[i * w + j] = Some(0.0);
                continue;
            }
            let mut best = f64::INFINITY;
            for di in -r..=r {
                for dj in -r..=r {
                    let (y, x) = (i as isize + di, j as isize + dj);
                    if y >= 0
                        && x >= 0
                        && (y as usize) < h
                        && (x as usize) < w
                        && mask.data[y as usize * w + x as usize]
                    {
                        best = best.min(((di * di + dj * dj) as f64).sqrt());
                    }
                }
            }
            if best <= radius as f64 {
                out[i * w + j] = Some(best);
            }
        }
    }
    out
}

/// Target texels inside `mask`, source texels outside. Texels outside the
/// mask within `feather` texels of it blend with weight
/// `1 − smoothstep(d / (feather + 1))`; `feather = 0` is a hard swap.
pub fn region_swap(
    g_src: &GaussianTexture,
    g_tgt: &GaussianTexture,
    mask: &TexelMask,
    feather: usize,
) -> Result<GaussianTexture> {
    check_same_size(g_src, g_tgt)?;
    if mask.height != g_src.height || mask.width != g_src.width {
        return Err(Error::DimensionMismatch(
            "mask size differs from the textures".into(),
        ));
    }
    let dist = mask_distance(mask, feather);
    let mut out = g_src.clone();
    for t in 0..out.texels.len() {
        match dist[t] {
            Some(d) if d == 0.0 => {
                out.texels[t] = g_tgt.texels[t];
                out.valid[t] = g_tgt.valid[t];
            }
            Some(d) if g_src.valid[t] && g_tgt.valid[t] => {
                let gamma = 1.0 - smoothstep(d / (feather + 1) as f64);
                out.texels[t] = lerp_texel(&g_src.texels[t], &g_tgt.texels[t], gamma);
            }
            _ => {}
        }
    }
    Ok(out)
}

fn clamp_to_valid(t: &mut Texel) {
    for c in &mut t.color {
        *c = c.clamp(0.0, 1.0);
    }
    t.opacity = t.opacity.clamp(MIN_OPACITY, MAX_OPACITY);
    for s in &mut t.scale {
        *s = s.max(MIN_SCALE);
    }
}

/// Adds the target's expression residual to the source neutral: additive on
/// colour, opacity and position, multiplicative on scale, and
/// `q_src ⊗ q_neutral⁻¹ ⊗ q_expr` on rotation. Valid where all three are.
pub fn expression_transfer(
    src_neutral: &GaussianTexture,
    tgt_neutral: &GaussianTexture,
    tgt_expr: &GaussianTexture,
) -> Result<GaussianTexture> {
    check_same_size(src_neutral, tgt_neutral)?;
    check_same_size(src_neutral, tgt_expr)?;
    let mut out = src_neutral.clone();
    for t in 0..out.texels.len() {
        out.valid[t] = src_neutral.valid[t] && tgt_neutral.valid[t] && tgt_expr.valid[t];
        if !out.valid[t] {
            continue;
        }
        let (s, n, e) = (
            &src_neutral.texels[t],
            &tgt_neutral.texels[t],
            &tgt_expr.texels[t],
        );
        let mut r = *s;
        for k in 0..3 {
            r.color[k] = s.color[k] + (e.color[k] - n.color[k]);
            r.position[k] = s.position[k] + (e.position[k] - n.position[k]);
            r.scale[k] = s.scale[k] * (e.scale[k].ln() - n.scale[k].ln()).exp();
        }
        r.opacity = s.opacity + (e.opacity - n.opacity);
        // The composed product is only approximately the identity when the
        // two rotations agree, so an unchanged rotation keeps the source bits.
        if n.rotation != e.rotation {
            let delta = n.quat().inverse() * e.quat();
            r.rotation = UnitQuaternion::from_array((s.quat() * delta).to_array()).to_array();
        }
        clamp_to_valid(&mut r);
        out.texels[t] = r;
    }
    Ok(out)
}
