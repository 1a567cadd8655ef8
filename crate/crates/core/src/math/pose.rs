use serde::{Deserialize, Serialize};

use super::{Mat3, Mat4, UnitQuaternion, Vec3};

/// Rigid transform `p ↦ R·p + t`.
///
/// Cameras store the world-to-camera transform; skinning rigs use the same
/// type for joint transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", from = "PoseRecord")]
pub struct RigidPose {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

/// Serialised as `{quaternion: [w,x,y,z], translation: [x,y,z]}`; the
/// quaternion is stored verbatim.
#[derive(Clone, Copy, Serialize, Deserialize)]
struct PoseRecord {
    quaternion: [f64; 4],
    translation: [f64; 3],
}

impl From<RigidPose> for PoseRecord {
    fn from(p: RigidPose) -> Self {
        Self {
            quaternion: p.rotation.to_array(),
            translation: p.translation.into(),
        }
    }
}

impl From<PoseRecord> for RigidPose {
    fn from(r: PoseRecord) -> Self {
        let [w, x, y, z] = r.quaternion;
        Self {
            rotation: UnitQuaternion { w, x, y, z },
            translation: Vec3::from(r.translation),
        }
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::IDENTITY,
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::IDENTITY,
            translation: t,
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn invert(&self) -> RigidPose {
        let r = self.rotation.inverse();
        RigidPose {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_matrix()
    }

    /// Homogeneous 4×4 form.
    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}
