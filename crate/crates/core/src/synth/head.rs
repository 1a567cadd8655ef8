//! Procedural heads: a latitude-band UV sphere scaled per axis, Gaussian
//! bump expressions along the surface normal, and a two-joint rig (head and
//! jaw hinge).

use serde::{Deserialize, Serialize};

use super::noise::procedural_color;
use super::rng::Rng;
use crate::avatar::{skin_points, SkinningRig};
use crate::error::{Error, Result};
use crate::math::{RigidPose, UnitQuaternion, Vec3};
use crate::mesh::TopologyMesh;
use crate::texture::texel_center_uv;

pub const BASE_RADIUS: f64 = 0.1;
/// Latitude band covered by the mesh, in radians (±80°).
pub const LATITUDE_LIMIT: f64 = 80.0 * std::f64::consts::PI / 180.0;
pub const EXPRESSION_BUMPS: usize = 8;
pub const BUMP_SIGMA: f64 = 0.03;
pub const MAX_BUMP_AMPLITUDE: f64 = 0.05;
pub const MAX_JAW_ANGLE: f64 = 0.5;
/// Bump centres in UV: forehead, brows, nose, cheeks, upper lip, chin.
pub const BUMP_UVS: [[f64; 2]; EXPRESSION_BUMPS] = [
    [0.5, 0.25],
    [0.375, 0.375],
    [0.625, 0.375],
    [0.5, 0.5],
    [0.375, 0.5],
    [0.625, 0.5],
    [0.5, 0.625],
    [0.5, 0.75],
];
pub const HEAD_JOINT: usize = 0;
pub const JAW_JOINT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub seed: u64,
    pub axis_scales: [f64; 3],
    pub texture_seed: u64,
    /// Jaw hinge point; the hinge axis is world x.
    pub jaw_pivot: [f64; 3],
}

impl IdentitySpec {
    /// Deterministic identity `index` of a dataset seeded with `seed`.
    pub fn sample(seed: u64, index: u64) -> Self {
        let mut rng = Rng::keyed(&[seed, 0x1D, index]);
        let axis_scales = [
            rng.uniform(0.85, 1.15),
            rng.uniform(0.85, 1.15),
            rng.uniform(0.85, 1.15),
        ];
        let texture_seed = rng.next_u64();
        Self::with_scales(seed, axis_scales, texture_seed)
    }

    pub fn with_scales(seed: u64, axis_scales: [f64; 3], texture_seed: u64) -> Self {
        let jaw_pivot = [0.0, 0.0, 0.4 * BASE_RADIUS * axis_scales[2]];
        Self {
            seed,
            axis_scales,
            texture_seed,
            jaw_pivot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis_scales.iter().any(|s| !(0.8..=1.2).contains(s)) {
            return Err(Error::InvalidInput(
                "axis scales must lie in [0.8, 1.2]".into(),
            ));
        }
        Ok(())
    }

    pub fn color(&self, u: f64, v: f64) -> [f64; 3] {
        procedural_color(self.texture_seed, u, v)
    }

    pub fn surface_point(&self, u: f64, v: f64) -> Vec3 {
        let d = sphere_direction(u, v);
        let s = self.axis_scales;
        Vec3::new(d.x * s[0], d.y * s[1], d.z * s[2]) * BASE_RADIUS
    }

    /// Outward unit normal of the neutral ellipsoid at surface point `p`.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        let s = self.axis_scales;
        Vec3::new(
            p.x / (s[0] * s[0]),
            p.y / (s[1] * s[1]),
            p.z / (s[2] * s[2]),
        )
        .normalize()
    }

    pub fn bump_centers(&self) -> [Vec3; EXPRESSION_BUMPS] {
        BUMP_UVS.map(|[u, v]| self.surface_point(u, v))
    }

    /// Rest and posed joint transforms for a jaw opening angle.
    pub fn joints(&self, jaw_angle: f64) -> (Vec<RigidPose>, Vec<RigidPose>) {
        let pivot = Vec3::from(self.jaw_pivot);
        let rest = vec![RigidPose::identity(), RigidPose::from_translation(pivot)];
        let hinge = RigidPose::new(
            UnitQuaternion::from_axis_angle(&Vec3::x(), jaw_angle),
            pivot,
        );
        (rest, vec![RigidPose::identity(), hinge])
    }

    /// Per-texel rig over an `h × w` texture.
    pub fn texture_rig(&self, jaw_angle: f64, h: usize, w: usize) -> SkinningRig {
        let (rest, posed) = self.joints(jaw_angle);
        let mut weights = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                let (u, v) = texel_center_uv(i, j, h, w);
                let jw = jaw_weight(u, v);
                weights.extend_from_slice(&[1.0 - jw, jw]);
            }
        }
        SkinningRig {
            rest,
            posed,
            height: h,
            width: w,
            weights,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSpec {
    /// Bump amplitudes in meters.
    pub e: Vec<f64>,
    pub jaw_angle: f64,
}

impl ExpressionSpec {
    pub fn neutral() -> Self {
        Self {
            e: vec![0.0; EXPRESSION_BUMPS],
            jaw_angle: 0.0,
        }
    }

    pub fn sample(rng: &mut Rng, amplitude: f64, max_jaw: f64) -> Self {
        let e = (0..EXPRESSION_BUMPS)
            .map(|_| rng.uniform(-amplitude, amplitude))
            .collect();
        Self {
            e,
            jaw_angle: rng.uniform(0.0, max_jaw),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e.len() != EXPRESSION_BUMPS {
            return Err(Error::InvalidInput(format!(
                "expression needs {EXPRESSION_BUMPS} amplitudes"
            )));
        }
        if self.e.iter().any(|e| !(e.abs() <= MAX_BUMP_AMPLITUDE))
            || !(self.jaw_angle.abs() <= MAX_JAW_ANGLE)
        {
            return Err(Error::InvalidInput(
                "expression outside the allowed range".into(),
            ));
        }
        Ok(())
    }
}

/// Unit direction for UV `(u, v)`: longitude `2π(u − ½)` with the front
/// (`u = ½`) facing −z, latitude spanning ±80° with `v = 1` at the bottom
/// (+y, image-down).
pub fn sphere_direction(u: f64, v: f64) -> Vec3 {
    let lon = std::f64::consts::TAU * (u - 0.5);
    let lat = LATITUDE_LIMIT * (2.0 * v - 1.0);
    Vec3::new(lat.cos() * lon.sin(), lat.sin(), -lat.cos() * lon.cos())
}

/// `(res + 1)²` vertices, `2·res²` triangles; the seam column is duplicated.
pub fn vertex_count(res: usize) -> usize {
    (res + 1) * (res + 1)
}

/// Jaw influence: lower front of the head, smoothly faded.
pub fn jaw_weight(u: f64, v: f64) -> f64 {
    let s = |e0: f64, e1: f64, x: f64| {
        let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    s(0.6, 0.75, v) * (1.0 - s(0.15, 0.25, (u - 0.5).abs()))
}

/// Neutral mesh of an identity at grid resolution `res`.
pub fn gen_identity(spec: &IdentitySpec, res: usize) -> Result<TopologyMesh> {
    spec.validate()?;
    if res < 3 {
        return Err(Error::InvalidInput(
            "mesh resolution must be at least 3".into(),
        ));
    }
    let mut vertices = Vec::with_capacity(vertex_count(res));
    let mut uvs = Vec::with_capacity(vertex_count(res));
    for r in 0..=res {
        for c in 0..=res {
            let (u, v) = (c as f64 / res as f64, r as f64 / res as f64);
            vertices.push(spec.surface_point(u, v));
            uvs.push([u, v]);
        }
    }
    let mut faces = Vec::with_capacity(2 * res * res);
    let at = |r: usize, c: usize| r * (res + 1) + c;
    for r in 0..res {
        for c in 0..res {
            // Counter-clockwise in UV as seen with v pointing down.
            faces.push([at(r, c), at(r + 1, c), at(r + 1, c + 1)]);
            faces.push([at(r, c), at(r + 1, c + 1), at(r, c + 1)]);
        }
    }
    let mesh = TopologyMesh {
        vertices,
        faces,
        uvs,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Displaces the neutral mesh by the expression bumps and then opens the jaw.
pub fn apply_expression(
    neutral: &TopologyMesh,
    identity: &IdentitySpec,
    expr: &ExpressionSpec,
) -> Result<TopologyMesh> {
    expr.validate()?;
    let centers = identity.bump_centers();
    let inv_s2 = 1.0 / (BUMP_SIGMA * BUMP_SIGMA);
    let mut verts: Vec<Vec3> = neutral
        .vertices
        .iter()
        .map(|x| {
            let mut d = 0.0;
            for (c, &e) in centers.iter().zip(&expr.e) {
                if e != 0.0 {
                    d += e * (-(x - c).norm_squared() * inv_s2).exp();
                }
            }
            if d == 0.0 {
                *x
            } else {
                x + identity.normal_at(x) * d
            }
        })
        .collect();
    if expr.jaw_angle != 0.0 {
        let (rest, posed) = identity.joints(expr.jaw_angle);
        let transforms: Vec<RigidPose> = rest
            .iter()
            .zip(&posed)
            .map(|(r, p)| p.compose(&r.invert()))
            .collect();
        let weights: Vec<f64> = neutral
            .uvs
            .iter()
            .flat_map(|[u, v]| {
                let jw = jaw_weight(*u, *v);
                [1.0 - jw, jw]
            })
            .collect();
        verts = skin_points(&verts, &weights, &transforms)?;
    }
    Ok(neutral.with_vertices(verts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ident() -> IdentitySpec {
        IdentitySpec::with_scales(1, [1.0; 3], 5)
    }

    #[test]
    fn unit_scales_give_radius_point_one() {
        let m = gen_identity(&ident(), 16).unwrap();
        assert!(m.vertices.iter().all(|v| (v.norm() - 0.1).abs() < 1e-12));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = IdentitySpec::sample(42, 3);
        let b = IdentitySpec::sample(42, 3);
        assert_eq!(a, b);
        assert_eq!(gen_identity(&a, 12).unwrap(), gen_identity(&b, 12).unwrap());
        assert_eq!(a.color(0.3, 0.7), b.color(0.3, 0.7));
        assert_ne!(IdentitySpec::sample(42, 4), a);
    }

    #[test]
    fn vertex_and_face_counts_match_constructor() {
        for res in [3, 8, 32] {
            let m = gen_identity(&ident(), res).unwrap();
            // Count distinct (row, column) grid positions the constructor emits.
            let mut cells = std::collections::BTreeSet::new();
            for uv in &m.uvs {
                cells.insert((
                    (uv[0] * res as f64).round() as usize,
                    (uv[1] * res as f64).round() as usize,
                ));
            }
            assert_eq!(cells.len(), vertex_count(res));
            assert_eq!(m.vertices.len(), vertex_count(res));
            assert_eq!(m.faces.len(), 2 * res * res);
        }
    }

    #[test]
    fn front_faces_negative_z() {
        let p = ident().surface_point(0.5, 0.5);
        assert!((p - Vec3::new(0.0, 0.0, -0.1)).norm() < 1e-15);
    }

    #[test]
    fn neutral_expression_is_bit_exact() {
        let id = IdentitySpec::sample(3, 0);
        let m = gen_identity(&id, 16).unwrap();
        assert_eq!(
            apply_expression(&m, &id, &ExpressionSpec::neutral()).unwrap(),
            m
        );
    }

    #[test]
    fn single_bump_peaks_at_its_center() {
        let id = IdentitySpec::sample(3, 1);
        let m = gen_identity(&id, 32).unwrap();
        let delta = 0.01;
        let mut e = ExpressionSpec::neutral();
        e.e[3] = delta;
        let out = apply_expression(&m, &id, &e).unwrap();
        let center = id.bump_centers()[3];
        let vi = m
            .vertices
            .iter()
            .position(|v| (v - center).norm() < 1e-12)
            .unwrap();
        assert!(((out.vertices[vi] - m.vertices[vi]).norm() - delta).abs() < 1e-9);
    }

    #[test]
    fn displacement_is_bounded() {
        let mut rng = Rng::new(11);
        for k in 0..20 {
            let id = IdentitySpec::sample(5, k);
            let m = gen_identity(&id, 16).unwrap();
            let e = ExpressionSpec::sample(&mut rng, 0.03, 0.4);
            let out = apply_expression(&m, &id, &e).unwrap();
            let pivot = Vec3::from(id.jaw_pivot).norm();
            let max_r = m.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let sum_e: f64 = e.e.iter().map(|x| x.abs()).sum();
            // A jaw rotation by θ moves a point by at most θ·(|x| + |pivot|).
            let bound = sum_e + e.jaw_angle.abs() * (max_r + sum_e + pivot);
            for (a, b) in m.vertices.iter().zip(&out.vertices) {
                assert!((a - b).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn jaw_moves_only_lower_front() {
        let id = ident();
        let m = gen_identity(&id, 16).unwrap();
        let e = ExpressionSpec {
            jaw_angle: 0.3,
            ..ExpressionSpec::neutral()
        };
        let out = apply_expression(&m, &id, &e).unwrap();
        for ((a, b), uv) in m.vertices.iter().zip(&out.vertices).zip(&m.uvs) {
            if uv[1] < 0.6 {
                assert!((a - b).norm() < 1e-13);
            }
        }
        let chin = m.uvs.iter().position(|uv| uv == &[0.5, 0.8125]).unwrap();
        assert!(out.vertices[chin].y > m.vertices[chin].y + 0.01);
    }

    #[test]
    fn texture_rig_weights_sum_to_one() {
        ident().texture_rig(0.2, 16, 16).validate().unwrap();
    }
}
