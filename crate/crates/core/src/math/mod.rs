//! Cameras, rays, rotations and rigid-pose algebra.
//!
//! Conventions: right-handed, the camera looks down +z with +y pointing down
//! in the image, pixel origin at the top-left corner and pixel centres at
//! integer coordinates + 0.5. Poses are stored world-to-camera.

mod camera;
mod pose;
mod quat;

pub use camera::{
    pixel_to_plucker, project_point, unproject_pixel, Camera, CameraIntrinsics, CameraRecord,
    PluckerRay,
};
pub use pose::RigidPose;
pub use quat::UnitQuaternion;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
