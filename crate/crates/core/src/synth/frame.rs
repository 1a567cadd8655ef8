//! Ground-truth Gaussian textures, rendered views, and perturbed coarse
//! meshes for one (identity, expression) pair.

use serde::{Deserialize, Serialize};

use super::head::{apply_expression, gen_identity, ExpressionSpec, IdentitySpec};
use super::rng::Rng;
use crate::error::Result;
use crate::image::RgbImage;
use crate::math::{Camera, Vec3};
use crate::mesh::{bake_position_texture, TopologyMesh};
use crate::render::{render, RenderSettings};
use crate::texture::{texel_center_uv, GaussianTexture, Texel};

pub const GT_OPACITY: f64 = 0.95;
/// Normal-axis scale relative to the smaller tangent footprint.
const THICKNESS_RATIO: f64 = 0.1;

/// Everything needed to regenerate a frame bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame: usize,
    pub identity_index: usize,
    pub expression_index: usize,
    pub identity: IdentitySpec,
    pub expression: ExpressionSpec,
    pub mesh_res: usize,
    pub uv_size: usize,
    pub sigma_noise_mm: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug)]
pub struct GtFrame {
    pub texture: GaussianTexture,
    pub images: Vec<RgbImage>,
    pub gt_mesh: TopologyMesh,
    pub coarse_mesh: TopologyMesh,
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` (meters) to
/// every vertex coordinate.
pub fn perturb_mesh(mesh: &TopologyMesh, sigma: f64, rng: &mut Rng) -> TopologyMesh {
    if sigma == 0.0 {
        return mesh.clone();
    }
    let verts = mesh
        .vertices
        .iter()
        .map(|v| v + Vec3::new(rng.normal(), rng.normal(), rng.normal()) * sigma)
        .collect();
    mesh.with_vertices(verts)
}

/// Gaussian texture of a surface mesh: baked positions, procedural colours,
/// texel-footprint scales, and tangent-frame rotations.
pub fn gt_texture(mesh: &TopologyMesh, identity: &IdentitySpec, uv_size: usize) -> GaussianTexture {
    let (pos, _) = bake_position_texture(mesh, uv_size, uv_size);
    let (h, w) = (uv_size, uv_size);
    let mut g = GaussianTexture::new(h, w);
    let p = |i: usize, j: usize| Vec3::from_column_slice(pos.texel(i, j));
    let ok = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < h
            && (j as usize) < w
            && pos.is_valid(i as usize, j as usize)
    };
    for i in 0..h {
        for j in 0..w {
            if !pos.is_valid(i, j) {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            let diff = |a: (isize, isize), b: (isize, isize), fallback: Vec3| {
                let (ha, hb) = (ok(a.0, a.1), ok(b.0, b.1));
                let pa = if ha {
                    p(a.0 as usize, a.1 as usize)
                } else {
                    p(i, j)
                };
                let pb = if hb {
                    p(b.0 as usize, b.1 as usize)
                } else {
                    p(i, j)
                };
                let span = ha as usize + hb as usize;
                if span == 0 {
                    fallback
                } else {
                    (pb - pa) / span as f64
                }
            };
            let du = diff((ii, jj - 1), (ii, jj + 1), Vec3::x() * 1e-3);
            let dv = diff((ii - 1, jj), (ii + 1, jj), Vec3::y() * 1e-3);
            let t = du.normalize();
            let b0 = dv - t * t.dot(&dv);
            let b = if b0.norm() > 1e-12 {
                b0.normalize()
            } else {
                t.cross(&Vec3::z()).normalize()
            };
            let n = t.cross(&b);
            let r = crate::math::Mat3::from_columns(&[t, b, n]);
            let (su, sv) = (du.norm(), dv.norm());
            let (u, v) = texel_center_uv(i, j, h, w);
            let idx = g.idx(i, j);
            g.texels[idx] = Texel {
                color: identity.color(u, v),
                opacity: GT_OPACITY,
                position: p(i, j).into(),
                scale: [su, sv, THICKNESS_RATIO * su.min(sv)],
                rotation: crate::math::UnitQuaternion::from_matrix(&r).to_array(),
            };
            g.valid[idx] = true;
        }
    }
    g
}

impl FrameSpec {
    pub fn neutral_mesh(&self) -> Result<TopologyMesh> {
        gen_identity(&self.identity, self.mesh_res)
    }

    pub fn gt_mesh(&self) -> Result<TopologyMesh> {
        apply_expression(&self.neutral_mesh()?, &self.identity, &self.expression)
    }

    /// Coarse mesh with noise drawn from `(noise_seed, draw)`; draw 0 is the
    /// one stored with the dataset.
    pub fn coarse_mesh(&self, gt_mesh: &TopologyMesh, draw: u64) -> TopologyMesh {
        let mut rng = Rng::keyed(&[self.noise_seed, draw]);
        perturb_mesh(gt_mesh, self.sigma_noise_mm * 1e-3, &mut rng)
    }

    /// Bakes the ground truth, renders it into every camera (8-bit
    /// quantised), and perturbs the coarse mesh.
    pub fn bake(&self, cameras: &[Camera], settings: &RenderSettings) -> Result<GtFrame> {
        let gt_mesh = self.gt_mesh()?;
        let texture = gt_texture(&gt_mesh, &self.identity, self.uv_size);
        let images = cameras
            .iter()
            .map(|c| {
                let mut img = render(&texture, c, settings);
                img.quantize();
                img
            })
            .collect();
        let coarse_mesh = self.coarse_mesh(&gt_mesh, 0);
        Ok(GtFrame {
            texture,
            images,
            gt_mesh,
            coarse_mesh,
        })
    }
}
