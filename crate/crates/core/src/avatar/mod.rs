//! Linear Gaussian-texture avatars: skinning, joint PCA, and editing.

mod edit;
mod pca;
mod skinning;

pub use edit::{expression_transfer, interpolate, lerp_texel, region_swap, TexelMask};
pub use pca::{
    fit_coefficients, gem_reconstruct, pca_fit, GemModel, MAX_OPACITY, MIN_OPACITY, MIN_SCALE,
};
pub use skinning::{blend_transforms, canonicalize, pose, skin_points, SkinningRig, MIN_BLEND_DET};
