//! Raw patch features for image and UV tokens.

use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::{pixel_to_plucker, Camera, Vec2};
use crate::texture::BakedTexture;

/// Per-pixel image channels: RGB then the Plücker ray (direction, moment).
pub const IMAGE_PIXEL_CHANNELS: usize = 9;
/// Per-texel UV channels: position (in model length units) then RGB.
pub const UV_TEXEL_CHANNELS: usize = 6;

/// Patch features for one view: one row per `p × p` patch in raster order,
/// laid out `(row-in-patch · p + col-in-patch) · 9 + channel`.
pub fn image_patch_features(image: &RgbImage, camera: &Camera, p: usize) -> Result<Mat> {
    let k = &camera.intrinsics;
    if image.width != k.width || image.height != k.height {
        return Err(Error::DimensionMismatch(
            "image size differs from camera intrinsics".into(),
        ));
    }
    if p == 0 || image.width % p != 0 || image.height % p != 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {}×{} not divisible by patch size {p}",
            image.width, image.height
        )));
    }
    let (th, tw) = (image.height / p, image.width / p);
    let mut out = Mat::zeros(th * tw, p * p * IMAGE_PIXEL_CHANNELS);
    for ti in 0..th {
        for tj in 0..tw {
            let row = out.row_mut(ti * tw + tj);
            for a in 0..p {
                for b in 0..p {
                    let (x, y) = (tj * p + b, ti * p + a);
                    let ray = pixel_to_plucker(
                        &Vec2::new(x as f64 + 0.5, y as f64 + 0.5),
                        &camera.pose,
                        k,
                    );
                    let o = (a * p + b) * IMAGE_PIXEL_CHANNELS;
                    row[o..o + 3].copy_from_slice(&image.pixel(x, y));
                    row[o + 3..o + 9].copy_from_slice(&ray.to_array());
                }
            }
        }
    }
    Ok(out)
}

/// Per-texel values kept for the de-tokenisation skip connection.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSnapshot {
    pub height: usize,
    pub width: usize,
    /// Meters.
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

/// Per-token columns after the texel block: the patch centroid.
pub const UV_TOKEN_EXTRA: usize = 3;

/// Bins per side of the pooled neighbourhood summary. The window is the
/// `3p × 3p` block of texels centred on the patch.
pub const UV_CONTEXT_BINS: usize = 6;

/// Per bin: mean relative position, then the fraction of valid texels.
pub const UV_CONTEXT_CHANNELS: usize = 4;

/// Feature width of one UV token.
pub fn uv_feature_width(p: usize) -> usize {
    p * p * UV_TEXEL_CHANNELS
        + UV_TOKEN_EXTRA
        + UV_CONTEXT_BINS * UV_CONTEXT_BINS * UV_CONTEXT_CHANNELS
}

/// Patch features for the UV grid plus the skip-connection snapshot.
/// Texel positions are given relative to the centroid of the patch's valid
/// texels, which is appended to the row; both are divided by `length_unit`.
/// Invalid texels contribute zero positions. A pooled summary of the
/// surrounding `3p × 3p` window, relative to the same centroid, closes the
/// row.
pub fn uv_patch_features(
    positions: &BakedTexture,
    colors: &BakedTexture,
    p: usize,
    length_unit: f64,
) -> Result<(Mat, InitSnapshot)> {
    let (h, w) = (positions.height, positions.width);
    if colors.height != h || colors.width != w || positions.channels != 3 || colors.channels != 3 {
        return Err(Error::DimensionMismatch(
            "position and colour textures must be matching 3-channel grids".into(),
        ));
    }
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::DimensionMismatch(format!(
            "texture {h}×{w} not divisible by patch size {p}"
        )));
    }
    let (th, tw) = (h / p, w / p);
    let mut feats = Mat::zeros(th * tw, uv_feature_width(p));
    let mut snap = InitSnapshot {
        height: h,
        width: w,
        positions: vec![[0.0; 3]; h * w],
        colors: vec![[0.0; 3]; h * w],
        valid: vec![false; h * w],
    };
    for i in 0..h {
        for j in 0..w {
            let t = i * w + j;
            let pos = positions.texel(i, j);
            let col = colors.texel(i, j);
            snap.positions[t] = [pos[0], pos[1], pos[2]];
            snap.colors[t] = [col[0], col[1], col[2]];
            snap.valid[t] = positions.is_valid(i, j);
        }
    }
    for ti in 0..th {
        for tj in 0..tw {
            let texels = || (0..p * p).map(|q| (ti * p + q / p) * w + tj * p + q % p);
            let (mut centroid, mut n) = ([0.0; 3], 0usize);
            for t in texels().filter(|&t| snap.valid[t]) {
                for c in 0..3 {
                    centroid[c] += snap.positions[t][c];
                }
                n += 1;
            }
            if n > 0 {
                centroid = centroid.map(|c| c / n as f64);
            }
            let row = feats.row_mut(ti * tw + tj);
            for (q, t) in texels().enumerate() {
                let o = q * UV_TEXEL_CHANNELS;
                for c in 0..3 {
                    if snap.valid[t] {
                        row[o + c] = (snap.positions[t][c] - centroid[c]) / length_unit;
                    }
                    row[o + 3 + c] = snap.colors[t][c];
                }
            }
            let o = p * p * UV_TEXEL_CHANNELS;
            for c in 0..3 {
                row[o + c] = centroid[c] / length_unit;
            }
            let ctx = &mut row[o + UV_TOKEN_EXTRA..];
            let mut area = [0usize; UV_CONTEXT_BINS * UV_CONTEXT_BINS];
            let side = 3 * p;
            for a in 0..side {
                for b in 0..side {
                    let bin =
                        (a * UV_CONTEXT_BINS / side) * UV_CONTEXT_BINS + b * UV_CONTEXT_BINS / side;
                    area[bin] += 1;
                    let (i, j) = (
                        (ti * p + a) as isize - p as isize,
                        (tj * p + b) as isize - p as isize,
                    );
                    if i < 0 || j < 0 || i as usize >= h || j as usize >= w {
                        continue;
                    }
                    let t = i as usize * w + j as usize;
                    if snap.valid[t] {
                        let f =
                            &mut ctx[bin * UV_CONTEXT_CHANNELS..(bin + 1) * UV_CONTEXT_CHANNELS];
                        for c in 0..3 {
                            f[c] += (snap.positions[t][c] - centroid[c]) / length_unit;
                        }
                        f[3] += 1.0;
                    }
                }
            }
            for (f, &n) in ctx.chunks_exact_mut(UV_CONTEXT_CHANNELS).zip(&area) {
                f.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
    }
    Ok((feats, snap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{CameraIntrinsics, RigidPose, Vec3};
    use crate::texture::TextureKind;

    fn cam(w: usize, h: usize) -> Camera {
        Camera::new(
            CameraIntrinsics {
                fx: 40.0,
                fy: 40.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
                width: w,
                height: h,
            },
            RigidPose::from_translation(Vec3::new(0.1, -0.2, 0.5)),
        )
    }

    #[test]
    fn token_count_per_view() {
        let f = image_patch_features(&RgbImage::new(64, 64), &cam(64, 64), 8).unwrap();
        assert_eq!((f.rows, f.cols), (64, 8 * 8 * 9));
    }

    #[test]
    fn indivisible_image_is_rejected() {
        assert!(image_patch_features(&RgbImage::new(60, 64), &cam(60, 64), 8).is_err());
    }

    #[test]
    fn image_features_match_direct_assembly() {
        let mut img = RgbImage::new(16, 8);
        for (n, v) in img.data.iter_mut().enumerate() {
            *v = (n % 251) as f64 / 251.0;
        }
        let c = cam(16, 8);
        let f = image_patch_features(&img, &c, 4).unwrap();
        // Token (1, 2) pixel (row 3, col 1) is image pixel (9, 7).
        let row = f.row(4 + 2);
        let o = (3 * 4 + 1) * 9;
        assert_eq!(&row[o..o + 3], &img.pixel(9, 7));
        let ray = pixel_to_plucker(&Vec2::new(9.5, 7.5), &c.pose, &c.intrinsics);
        assert_eq!(&row[o + 3..o + 9], &ray.to_array());
    }

    #[test]
    fn uv_features_match_manual_gather() {
        let (h, w, p) = (8, 8, 2);
        let mut pos = BakedTexture::new_invalid(h, w, 3, TextureKind::Position, 0.0);
        let mut col = BakedTexture::new_invalid(h, w, 3, TextureKind::Rgb, 0.5);
        for i in 0..h {
            for j in 0..w {
                pos.texel_mut(i, j)
                    .copy_from_slice(&[i as f64, j as f64, 1.0]);
                col.texel_mut(i, j)
                    .copy_from_slice(&[0.1 * i as f64, 0.0, 0.01 * j as f64]);
                pos.valid[i * w + j] = (i + j) % 3 != 0;
            }
        }
        let (f, snap) = uv_patch_features(&pos, &col, p, 0.5).unwrap();
        assert_eq!((f.rows, f.cols), (16, 27 + 144));
        for ti in 0..4 {
            for tj in 0..4 {
                let cells: Vec<(usize, usize)> = (0..p * p)
                    .map(|q| (ti * p + q / p, tj * p + q % p))
                    .collect();
                let valid: Vec<&(usize, usize)> =
                    cells.iter().filter(|(i, j)| pos.is_valid(*i, *j)).collect();
                let n = valid.len().max(1) as f64;
                let ci = valid.iter().map(|(i, _)| *i as f64).sum::<f64>() / n;
                let cj = valid.iter().map(|(_, j)| *j as f64).sum::<f64>() / n;
                let cz = if valid.is_empty() { 0.0 } else { 1.0 };
                let row = f.row(ti * 4 + tj);
                assert_eq!(&row[24..27], &[ci * 2.0, cj * 2.0, cz * 2.0]);
                for (q, &(i, j)) in cells.iter().enumerate() {
                    let o = q * 6;
                    let expect = if pos.is_valid(i, j) {
                        [(i as f64 - ci) * 2.0, (j as f64 - cj) * 2.0, 0.0]
                    } else {
                        [0.0; 3]
                    };
                    assert_eq!(&row[o..o + 3], &expect);
                    assert_eq!(&row[o + 3..o + 6], col.texel(i, j));
                }
                // With p = 2 every context bin holds exactly one texel.
                for a in 0..6 {
                    for b in 0..6 {
                        let (i, j) = ((ti * p + a) as isize - 2, (tj * p + b) as isize - 2);
                        let inside = i >= 0 && j >= 0 && i < h as isize && j < w as isize;
                        let expect = if inside && pos.is_valid(i as usize, j as usize) {
                            [
                                (i as f64 - ci) * 2.0,
                                (j as f64 - cj) * 2.0,
                                (1.0 - cz) * 2.0,
                                1.0,
                            ]
                        } else {
                            [0.0; 4]
                        };
                        let o = 27 + (a * 6 + b) * 4;
                        assert_eq!(&row[o..o + 4], &expect, "token {ti},{tj} bin {a},{b}");
                    }
                }
            }
        }
        assert_eq!(snap.valid, pos.valid);
        assert_eq!(snap.positions[9], [1.0, 1.0, 1.0]);
    }
}
