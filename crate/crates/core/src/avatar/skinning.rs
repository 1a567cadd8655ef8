//! Linear blend skinning with per-texel weights. The weighted sum of joint
//! transforms is projected back onto the nearest rigid transform so that
//! splat rotations stay orthonormal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, RigidPose, UnitQuaternion, Vec3};
use crate::texture::GaussianTexture;

/// Blended transforms with `det` below this are rejected.
pub const MIN_BLEND_DET: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinningRig {
    pub rest: Vec<RigidPose>,
    pub posed: Vec<RigidPose>,
    pub height: usize,
    pub width: usize,
    /// `height · width · joints`, texel-major.
    pub weights: Vec<f64>,
}

impl SkinningRig {
    pub fn joints(&self) -> usize {
        self.rest.len()
    }

    pub fn texel_weights(&self, t: usize) -> &[f64] {
        let j = self.joints();
        &self.weights[t * j..(t + 1) * j]
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joints();
        if j == 0 || self.posed.len() != j {
            return Err(Error::InvalidInput(
                "rig needs matching rest and posed joints".into(),
            ));
        }
        if self.weights.len() != self.height * self.width * j {
            return Err(Error::DimensionMismatch(
                "rig weight grid does not match its dimensions".into(),
            ));
        }
        for row in self.weights.chunks_exact(j) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|w| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(
                    "rig weights must be nonnegative and sum to 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Per-joint `posed ∘ rest⁻¹`.
    pub fn joint_transforms(&self) -> Vec<RigidPose> {
        self.rest
            .iter()
            .zip(&self.posed)
            .map(|(r, p)| p.compose(&r.invert()))
            .collect()
    }
}

/// Rigid transform nearest to `Σ w_j · T_j` (rotation part via polar
/// decomposition, translation blended linearly).
pub fn blend_transforms(transforms: &[RigidPose], weights: &[f64]) -> Result<RigidPose> {
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (t, &w) in transforms.iter().zip(weights) {
        if w != 0.0 {
            a += t.rotation_matrix() * w;
            b += t.translation * w;
        }
    }
    let det = a.determinant();
    if !(det >= MIN_BLEND_DET) {
        return Err(Error::DegenerateTransform(det));
    }
    let svd = a.svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    Ok(RigidPose::new(UnitQuaternion::from_matrix(&r), b))
}

fn transform_texture(
    g: &GaussianTexture,
    rig: &SkinningRig,
    inverse: bool,
) -> Result<GaussianTexture> {
    rig.validate()?;
    if rig.height != g.height || rig.width != g.width {
        return Err(Error::LayoutMismatch("rig and texture sizes differ".into()));
    }
    let joints = rig.joint_transforms();
    let mut out = g.clone();
    for (t, texel) in out.texels.iter_mut().enumerate() {
        if !g.valid[t] {
            continue;
        }
        let mut pose = blend_transforms(&joints, rig.texel_weights(t))?;
        if inverse {
            pose = pose.invert();
        }
        texel.position = pose.apply(&texel.position_vec()).into();
        texel.rotation = (pose.rotation * texel.quat()).to_array();
    }
    Ok(out)
}

/// Removes the rig's pose: inverse skinning into canonical space.
pub fn canonicalize(g: &GaussianTexture, rig: &SkinningRig) -> Result<GaussianTexture> {
    transform_texture(g, rig, true)
}

/// Forward skinning from canonical space.
pub fn pose(g: &GaussianTexture, rig: &SkinningRig) -> Result<GaussianTexture> {
    transform_texture(g, rig, false)
}

/// Forward skinning of points with per-point weight rows of length `joints`.
pub fn skin_points(
    points: &[Vec3],
    weights: &[f64],
    transforms: &[RigidPose],
) -> Result<Vec<Vec3>> {
    let j = transforms.len();
    if weights.len() != points.len() * j {
        return Err(Error::DimensionMismatch(
            "weight rows do not match points".into(),
        ));
    }
    points
        .iter()
        .zip(weights.chunks_exact(j))
        .map(|(p, w)| Ok(blend_transforms(transforms, w)?.apply(p)))
        .collect()
}
