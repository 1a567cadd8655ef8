use crate::math::{Camera, CameraIntrinsics, Mat3, RigidPose, UnitQuaternion, Vec3};

/// Horizontal half-arc of the input rig (±40°).
pub const ARC_HALF_ANGLE: f64 = 40.0 * std::f64::consts::PI / 180.0;

/// Pinhole camera at `center` aimed at the origin, image y pointing along
/// world +y (down).
pub fn look_at_origin(center: Vec3, intrinsics: CameraIntrinsics) -> Camera {
    let f = (-center).normalize();
    let x = Vec3::y().cross(&f).normalize();
    let y = f.cross(&x);
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = -(rotation.rotate(&center));
    Camera::new(intrinsics, RigidPose::new(rotation, translation))
}

pub fn camera_at(
    azimuth: f64,
    elevation: f64,
    radius: f64,
    intrinsics: CameraIntrinsics,
) -> Camera {
    // Positive elevation lifts the camera, i.e. towards world −y.
    let c = Vec3::new(
        elevation.cos() * azimuth.sin(),
        -elevation.sin(),
        -elevation.cos() * azimuth.cos(),
    ) * radius;
    look_at_origin(c, intrinsics)
}

/// Centered intrinsics with `fx = fy = focal · width`.
pub fn default_intrinsics(width: usize, height: usize, focal: f64) -> CameraIntrinsics {
    let f = focal * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    }
}

/// `views` cameras evenly spaced over ±40° azimuth; a single view is frontal.
pub fn gen_cameras(
    views: usize,
    radius: f64,
    elevation: f64,
    intrinsics: CameraIntrinsics,
) -> Vec<Camera> {
    (0..views)
        .map(|i| {
            let az = if views == 1 {
                0.0
            } else {
                -ARC_HALF_ANGLE + 2.0 * ARC_HALF_ANGLE * i as f64 / (views - 1) as f64
            };
            camera_at(az, elevation, radius, intrinsics)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        default_intrinsics(64, 48, 1.6)
    }

    #[test]
    fn single_view_is_frontal() {
        let c = &gen_cameras(1, 0.5, 0.0, k())[0];
        assert!((c.center() - Vec3::new(0.0, 0.0, -0.5)).norm() < 1e-12);
        assert!((c.pose.rotation_matrix() - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn origin_projects_to_principal_point() {
        for c in gen_cameras(7, 0.6, 0.2, k()) {
            let (px, depth) = c.project(&Vec3::zeros()).unwrap();
            assert!((px.x - 32.0).abs() < 1e-6 && (px.y - 24.0).abs() < 1e-6);
            assert!((depth - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn twelve_views_are_evenly_spaced() {
        let cams = gen_cameras(12, 0.5, 0.0, k());
        let step = 2.0 * ARC_HALF_ANGLE / 11.0;
        for w in cams.windows(2) {
            let (a, b) = (w[0].center().normalize(), w[1].center().normalize());
            assert!((a.dot(&b) - step.cos()).abs() < 1e-12);
        }
    }
}
