use nalgebra::{Matrix2, Matrix2x3};
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;
use crate::math::{Camera, CameraIntrinsics, Mat3, RigidPose, Vec2, Vec3};
use crate::texture::{GaussianTexture, Texel};

/// Compositing stops once transmittance drops below this.
const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Splat footprint half-extent in standard deviations.
const EXTENT_SIGMAS: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
    /// Added to the diagonal of every projected covariance (pixels²).
    pub dilation: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            near: 0.01,
            far: 100.0,
            dilation: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean: Vec2,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// Projects one splat. `None` when its centre lies outside `(near, far)`.
pub fn project_gaussian(
    texel: &Texel,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Option<ProjectedGaussian> {
    let t = pose.apply(&texel.position_vec());
    if !(t.z > settings.near && t.z < settings.far) {
        return None;
    }
    let r = texel.quat().to_matrix();
    let s2 = Mat3::from_diagonal(&Vec3::from(texel.scale.map(|s| s * s)));
    let sigma3 = r * s2 * r.transpose();
    let w = pose.rotation_matrix();
    let iz = 1.0 / t.z;
    let j = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * t.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * t.y * iz * iz,
    );
    let jw = j * w;
    let mut cov = jw * sigma3 * jw.transpose();
    cov[(0, 0)] += settings.dilation;
    cov[(1, 1)] += settings.dilation;
    let mean = Vec2::new(k.fx * t.x * iz + k.cx, k.fy * t.y * iz + k.cy);
    Some(ProjectedGaussian {
        mean,
        cov,
        depth: t.z,
    })
}

/// Per-pixel compositing bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderStats {
    /// Sum of composited weights `T_i · α_i`.
    pub weight_sum: Vec<f64>,
    /// Transmittance left for the background.
    pub transmittance: Vec<f64>,
}

pub fn render(g: &GaussianTexture, camera: &Camera, settings: &RenderSettings) -> RgbImage {
    render_with_stats(g, camera, settings).0
}

struct Splat {
    depth: f64,
    index: usize,
    mean: Vec2,
    inv: [f64; 3],
    bounds: [usize; 4],
    opacity: f64,
    color: [f64; 3],
}

pub fn render_with_stats(
    g: &GaussianTexture,
    camera: &Camera,
    settings: &RenderSettings,
) -> (RgbImage, RenderStats) {
    let k = &camera.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut splats = Vec::new();
    for (index, texel) in g.texels.iter().enumerate() {
        if !g.valid[index] || texel.opacity <= 0.0 {
            continue;
        }
        let Some(p) = project_gaussian(texel, &camera.pose, k, settings) else {
            continue;
        };
        let det = p.cov.determinant();
        if !(det > 0.0) || !p.mean.iter().all(|v| v.is_finite()) {
            continue;
        }
        let rx = EXTENT_SIGMAS * p.cov[(0, 0)].sqrt();
        let ry = EXTENT_SIGMAS * p.cov[(1, 1)].sqrt();
        // Pixel x covers [x, x+1) with its centre at x + 0.5.
        let x0 = (p.mean.x - rx - 0.5).ceil().max(0.0);
        let x1 = (p.mean.x + rx - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (p.mean.y - ry - 0.5).ceil().max(0.0);
        let y1 = (p.mean.y + ry - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv = [
            p.cov[(1, 1)] / det,
            -p.cov[(0, 1)] / det,
            p.cov[(0, 0)] / det,
        ];
        splats.push(Splat {
            depth: p.depth,
            index,
            mean: p.mean,
            inv,
            bounds: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
            opacity: texel.opacity,
            color: texel.color,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let n = w * h;
    let mut accum = vec![[0.0f64; 3]; n];
    let mut trans = vec![1.0f64; n];
    let mut weight = vec![0.0f64; n];
    for s in &splats {
        let [x0, x1, y0, y1] = s.bounds;
        for y in y0..=y1 {
            let dy = y as f64 + 0.5 - s.mean.y;
            for x in x0..=x1 {
                let p = y * w + x;
                let t = trans[p];
                if t < MIN_TRANSMITTANCE {
                    continue;
                }
                let dx = x as f64 + 0.5 - s.mean.x;
                let q = s.inv[0] * dx * dx + 2.0 * s.inv[1] * dx * dy + s.inv[2] * dy * dy;
                let a = s.opacity * (-0.5 * q).exp();
                let wgt = t * a;
                for c in 0..3 {
                    accum[p][c] += wgt * s.color[c];
                }
                weight[p] += wgt;
                trans[p] = t * (1.0 - a);
            }
        }
    }
    let mut img = RgbImage::new(w, h);
    for p in 0..n {
        let t = trans[p];
        let rgb = [0, 1, 2].map(|c| accum[p][c] + t * settings.background[c]);
        img.set_pixel(p % w, p / w, rgb);
    }
    (
        img,
        RenderStats {
            weight_sum: weight,
            transmittance: trans,
        },
    )
}
