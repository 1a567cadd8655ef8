//! Deterministic procedural heads, expressions, cameras, and datasets.

mod cameras;
mod dataset;
mod frame;
mod head;
mod noise;
mod rng;

pub use cameras::{camera_at, default_intrinsics, gen_cameras, look_at_origin, ARC_HALF_ANGLE};
pub use dataset::{
    build_manifest, frame_dir, generate_dataset, sha256_file, Dataset, FrameData, GenConfig,
    Manifest,
};
pub use frame::{gt_texture, perturb_mesh, FrameSpec, GtFrame, GT_OPACITY};
pub use head::{
    apply_expression, gen_identity, jaw_weight, sphere_direction, vertex_count, ExpressionSpec,
    IdentitySpec, BASE_RADIUS, BUMP_SIGMA, BUMP_UVS, EXPRESSION_BUMPS, HEAD_JOINT, JAW_JOINT,
    LATITUDE_LIMIT, MAX_BUMP_AMPLITUDE, MAX_JAW_ANGLE,
};
pub use noise::{procedural_color, value_noise};
pub use rng::Rng;
