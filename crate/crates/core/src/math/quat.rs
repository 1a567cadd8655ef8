use std::ops::{Mul, Neg};

use super::{Mat3, Vec3};

/// Rotation quaternion stored as `(w, x, y, z)`.
///
/// Constructors normalise; `q` and `-q` describe the same rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalises `(w, x, y, z)`; falls back to the identity when the norm is
    /// below `1e-8`.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n >= 1e-8) {
            return Self::IDENTITY;
        }
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new_normalize(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n < 1e-15 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self {
            w: c,
            x: s * a.x,
            y: s * a.y,
            z: s * a.z,
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Inverse of a unit quaternion (its conjugate).
    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Shepperd's method; the input must be a proper rotation matrix.
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::new_normalize(w, x, y, z)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w(u×v) + 2u×(u×v)
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    /// Hamilton product; `(a * b).rotate(v) == a.rotate(b.rotate(v))`.
    fn mul(self, o: Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;
    fn neg(self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| {
                w * w + x * x + y * y + z * z > 1e-3
            })
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z))
    }

    #[test]
    fn identity_maps_to_identity_matrix() {
        assert_eq!(UnitQuaternion::IDENTITY.to_matrix(), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        let r = q.to_matrix() * Vec3::x();
        assert!((r - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn tiny_norm_falls_back_to_identity() {
        assert_eq!(
            UnitQuaternion::new_normalize(1e-9, 0.0, 0.0, 0.0),
            UnitQuaternion::IDENTITY
        );
    }

    proptest! {
        #[test]
        fn double_cover(q in rand_quat()) {
            let d = q.to_matrix() - (-q).to_matrix();
            prop_assert!(d.abs().max() < 1e-15);
        }

        #[test]
        fn matrix_is_rotation(q in rand_quat()) {
            let m = q.to_matrix();
            prop_assert!((m.transpose() * m - Mat3::identity()).abs().max() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matrix_round_trip(q in rand_quat()) {
            let back = UnitQuaternion::from_matrix(&q.to_matrix());
            prop_assert!(back.dot(&q).abs() > 1.0 - 1e-12);
        }

        #[test]
        fn product_composes_rotations(a in rand_quat(), b in rand_quat(), x in -1.0..1.0f64) {
            let v = Vec3::new(x, 0.3, -0.7);
            let lhs = (a * b).rotate(&v);
            let rhs = a.to_matrix() * (b.to_matrix() * v);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
