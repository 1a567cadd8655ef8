use super::{RasterBuffer, TopologyMesh};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::{Camera, Vec3};
use crate::texture::{BakedTexture, TextureKind};

/// Colour assigned to texels that no view sees.
pub const NEUTRAL_GRAY: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BakeReport {
    /// Texels strictly inside two or more UV triangles. The lower face index wins.
    pub overlaps: usize,
}

/// Barycentric interpolation of a per-vertex attribute (`channels` values per
/// vertex) at every texel centre. Texels outside every UV triangle stay invalid.
pub fn bake_vertex_attribute(
    mesh: &TopologyMesh,
    values: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kind: TextureKind,
) -> (BakedTexture, BakeReport) {
    assert_eq!(values.len(), mesh.vertices.len() * channels);
    let mut tex = BakedTexture::new_invalid(height, width, channels, kind, 0.0);
    let mut strict = vec![false; height * width];
    let mut report = BakeReport::default();
    for f in &mesh.faces {
        let uv = [mesh.uvs[f[0]], mesh.uvs[f[1]], mesh.uvs[f[2]]];
        let area = mesh.uv_area(f);
        if area.abs() < 1e-14 {
            continue;
        }
        // Texel centre (j + 0.5)/W inside [min_u, max_u].
        let min_u = uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_u = uv.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_v = uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_v = uv.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let j0 = (min_u * width as f64 - 0.5).ceil().max(0.0) as usize;
        let j1 = ((max_u * width as f64 - 0.5).floor()).min(width as f64 - 1.0);
        let i0 = (min_v * height as f64 - 0.5).ceil().max(0.0) as usize;
        let i1 = ((max_v * height as f64 - 0.5).floor()).min(height as f64 - 1.0);
        if j1 < 0.0 || i1 < 0.0 {
            continue;
        }
        for i in i0..=i1 as usize {
            for j in j0..=j1 as usize {
                let p = [
                    (j as f64 + 0.5) / width as f64,
                    (i as f64 + 0.5) / height as f64,
                ];
                let b0 = edge(uv[1], uv[2], p) / area;
                let b1 = edge(uv[2], uv[0], p) / area;
                let b2 = edge(uv[0], uv[1], p) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let interior = b0.min(b1).min(b2) > 1e-9;
                let t = i * width + j;
                if tex.valid[t] {
                    if interior && strict[t] {
                        report.overlaps += 1;
                    }
                    continue;
                }
                tex.valid[t] = true;
                strict[t] = interior;
                let out = tex.texel_mut(i, j);
                for (c, o) in out.iter_mut().enumerate() {
                    *o = b0 * values[f[0] * channels + c]
                        + b1 * values[f[1] * channels + c]
                        + b2 * values[f[2] * channels + c];
                }
            }
        }
    }
    if report.overlaps > 0 {
        log::warn!(
            "uv atlas overlap: {} texels claimed by several faces",
            report.overlaps
        );
    }
    (tex, report)
}

/// Dense 3D location texture: barycentric interpolation of vertex positions.
pub fn bake_position_texture(
    mesh: &TopologyMesh,
    height: usize,
    width: usize,
) -> (BakedTexture, BakeReport) {
    let values: Vec<f64> = mesh.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    bake_vertex_attribute(mesh, &values, 3, height, width, TextureKind::Position)
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Projects each valid texel of `positions` into every view and averages the
/// bilinear colour samples of the views in which it is visible.
///
/// Visibility: at the projected pixel, the rasterised face's plane is
/// intersected with the camera ray through the exact projected point; the
/// texel is visible if that depth matches its own within
/// `1e-3 · mesh.scene_scale()`. Texels seen by no view get [`NEUTRAL_GRAY`]
/// and are flagged invalid.
pub fn reproject_rgb_texture(
    mesh: &TopologyMesh,
    positions: &BakedTexture,
    images: &[RgbImage],
    cameras: &[Camera],
    rasters: &[RasterBuffer],
) -> BakedTexture {
    assert!(images.len() == cameras.len() && cameras.len() == rasters.len());
    let tau = 1e-3 * mesh.scene_scale();
    let (h, w) = (positions.height, positions.width);
    let mut out = BakedTexture::new_invalid(h, w, 3, TextureKind::Rgb, NEUTRAL_GRAY);
    let cam_verts: Vec<Vec<Vec3>> = cameras
        .iter()
        .map(|c| mesh.vertices.iter().map(|v| c.pose.apply(v)).collect())
        .collect();
    for i in 0..h {
        for j in 0..w {
            if !positions.is_valid(i, j) {
                continue;
            }
            let p = Vec3::from_column_slice(positions.texel(i, j));
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for (v, cam) in cameras.iter().enumerate() {
                let Ok((px, depth)) = cam.project(&p) else {
                    continue;
                };
                let k = &cam.intrinsics;
                if px.x < 0.0 || px.y < 0.0 || px.x >= k.width as f64 || px.y >= k.height as f64 {
                    continue;
                }
                let idx = px.y as usize * k.width + px.x as usize;
                let rb = &rasters[v];
                if !rb.covered(idx) {
                    continue;
                }
                let f = mesh.faces[rb.face[idx] as usize];
                let cv = &cam_verts[v];
                let normal = (cv[f[1]] - cv[f[0]]).cross(&(cv[f[2]] - cv[f[0]]));
                let ray = Vec3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
                let denom = normal.dot(&ray);
                if denom.abs() < 1e-300 {
                    continue;
                }
                let surface_depth = normal.dot(&cv[f[0]]) / denom;
                if (surface_depth - depth).abs() <= tau {
                    let c = images[v].sample_bilinear(px.x, px.y);
                    for ch in 0..3 {
                        sum[ch] += c[ch];
                    }
                    n += 1;
                }
            }
            if n > 0 {
                let t = out.texel_mut(i, j);
                for ch in 0..3 {
                    t[ch] = sum[ch] / n as f64;
                }
                out.valid[i * w + j] = true;
            }
        }
    }
    out
}

/// Bilinear lookup at `(u, v)` over valid texels only; invalid or
/// out-of-range neighbours are dropped and the remaining weights renormalised.
pub fn sample_bilinear(tex: &BakedTexture, u: f64, v: f64) -> Result<Vec<f64>> {
    let x = u * tex.width as f64 - 0.5;
    let y = v * tex.height as f64 - 0.5;
    let (x0, y0) = (x.floor(), y.floor());
    let (ax, ay) = (x - x0, y - y0);
    let mut taps = [(0isize, 0isize, 0.0f64); 4];
    let mut n = 0;
    for (dy, wy) in [(0isize, 1.0 - ay), (1, ay)] {
        for (dx, wx) in [(0isize, 1.0 - ax), (1, ax)] {
            let (ti, tj) = (y0 as isize + dy, x0 as isize + dx);
            if ti < 0 || tj < 0 || ti >= tex.height as isize || tj >= tex.width as isize {
                continue;
            }
            if !tex.is_valid(ti as usize, tj as usize) {
                continue;
            }
            taps[n] = (ti, tj, wy * wx);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidSample { u, v });
    }
    let taps = &taps[..n];
    let total: f64 = taps.iter().map(|t| t.2).sum();
    let mut out = vec![0.0; tex.channels];
    if total < 1e-12 {
        // All valid neighbours carry zero weight: take the first one.
        out.copy_from_slice(tex.texel(taps[0].0 as usize, taps[0].1 as usize));
        return Ok(out);
    }
    for &(ti, tj, wt) in taps {
        for (o, v) in out.iter_mut().zip(tex.texel(ti as usize, tj as usize)) {
            *o += wt * v;
        }
    }
    if total != 1.0 {
        for o in &mut out {
            *o /= total;
        }
    }
    Ok(out)
}

/// Samples a position texture at the template's vertex UVs; topology and UVs
/// are copied from the template.
pub fn extract_mesh_from_texture(
    positions: &BakedTexture,
    template: &TopologyMesh,
) -> Result<TopologyMesh> {
    if positions.channels < 3 {
        return Err(Error::LayoutMismatch(
            "position texture needs 3 channels".into(),
        ));
    }
    let vertices = template
        .uvs
        .iter()
        .map(|uv| sample_bilinear(positions, uv[0], uv[1]).map(|s| Vec3::new(s[0], s[1], s[2])))
        .collect::<Result<Vec<_>>>()?;
    Ok(template.with_vertices(vertices))
}
