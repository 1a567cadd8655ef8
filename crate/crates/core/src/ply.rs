//! Binary little-endian PLY export in the common splat layout.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::texture::GaussianTexture;

/// Zeroth-order spherical-harmonic constant.
pub const SH_C0: f64 = 0.28209479177387814;

pub const PLY_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

/// One splat per valid texel in raster order: position, `(c − ½)/C₀`,
/// opacity logit, log-scales, and the `(w, x, y, z)` rotation.
pub fn write_ply(g: &GaussianTexture, mut w: impl Write) -> Result<()> {
    let count = g.valid_count();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for p in PLY_PROPERTIES {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(count * PLY_PROPERTIES.len() * 4);
    for (t, _) in g.texels.iter().zip(&g.valid).filter(|(_, v)| **v) {
        let logit = (t.opacity / (1.0 - t.opacity)).ln();
        let vals = t
            .position
            .iter()
            .copied()
            .chain(t.color.iter().map(|c| (c - 0.5) / SH_C0))
            .chain([logit])
            .chain(t.scale.iter().map(|s| s.ln()))
            .chain(t.rotation.iter().copied());
        for v in vals {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_ply(g: &GaussianTexture, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ply(g, &mut f)?;
    f.flush()?;
    Ok(())
}
