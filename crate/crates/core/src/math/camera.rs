use serde::{Deserialize, Serialize};

use super::{RigidPose, UnitQuaternion, Vec2, Vec3};
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }
}

/// A calibrated camera: intrinsics plus world-to-camera pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: RigidPose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: RigidPose) -> Self {
        Self { intrinsics, pose }
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.pose.invert().translation
    }

    pub fn project(&self, p: &Vec3) -> Result<(Vec2, f64)> {
        project_point(p, &self.pose, &self.intrinsics)
    }
}

/// Plücker line: unit direction and moment `origin × direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PluckerRay {
    pub direction: Vec3,
    pub moment: Vec3,
}

impl PluckerRay {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.direction.x,
            self.direction.y,
            self.direction.z,
            self.moment.x,
            self.moment.y,
            self.moment.z,
        ]
    }
}

/// Projects a world point; fails when the camera-frame depth is ≤ 1e-9.
pub fn project_point(p: &Vec3, pose: &RigidPose, k: &CameraIntrinsics) -> Result<(Vec2, f64)> {
    let pc = pose.apply(p);
    if pc.z <= 1e-9 {
        return Err(Error::BehindCamera(pc.z));
    }
    let px = Vec2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
    Ok((px, pc.z))
}

/// World point at camera-frame depth `depth` along the ray through `pixel`.
pub fn unproject_pixel(pixel: &Vec2, depth: f64, pose: &RigidPose, k: &CameraIntrinsics) -> Vec3 {
    let pc = Vec3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    pose.invert().apply(&pc)
}

pub fn pixel_to_plucker(pixel: &Vec2, pose: &RigidPose, k: &CameraIntrinsics) -> PluckerRay {
    let inv = pose.invert();
    let dir_cam = Vec3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
    let direction = inv.rotation.rotate(&dir_cam).normalize();
    let origin = inv.translation;
    PluckerRay {
        direction,
        moment: origin.cross(&direction),
    }
}

/// JSON camera record: `{fx, fy, cx, cy, width, height, quaternion:[w,x,y,z], translation:[x,y,z]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    /// `input` or `heldout`; absent means input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera, role: Option<&str>) -> Self {
        let k = cam.intrinsics;
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            quaternion: cam.pose.rotation.to_array(),
            translation: cam.pose.translation.into(),
            role: role.map(str::to_owned),
        }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let k = CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        k.validate()?;
        let q = self.quaternion;
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "camera quaternion has norm {n}"
            )));
        }
        // Already-unit quaternions are kept verbatim so records round-trip bit-exactly.
        let rot = if (n - 1.0).abs() <= 1e-12 {
            UnitQuaternion {
                w: q[0],
                x: q[1],
                y: q[2],
                z: q[3],
            }
        } else {
            UnitQuaternion::from_array(q)
        };
        let pose = RigidPose::new(rot, Vec3::from(self.translation));
        Ok(Camera::new(k, pose))
    }
}
