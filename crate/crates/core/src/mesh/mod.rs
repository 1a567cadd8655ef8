//! Fixed-topology triangle meshes with per-vertex UVs, UV rasterisation,
//! texture baking and reprojection, and mesh distance metrics.

mod bake;
mod metrics;
mod obj;
mod raster;

pub use bake::{
    bake_position_texture, bake_vertex_attribute, extract_mesh_from_texture, reproject_rgb_texture,
    sample_bilinear, BakeReport, NEUTRAL_GRAY,
};
pub use metrics::{
    closest_point_on_triangle, mesh_metrics, p2p_mm, p2s_mm, point_triangle_distance,
};
pub use obj::{read_obj, write_obj};
pub use raster::{rasterize, RasterBuffer, NO_FACE};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Triangle mesh with one UV per vertex (single chart, no seams).
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Vec<[f64; 2]>,
}

impl TopologyMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.uvs.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} uvs for {} vertices",
                self.uvs.len(),
                n
            )));
        }
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&v| v >= n)) {
            return Err(Error::InvalidInput(format!(
                "face {f} references a missing vertex"
            )));
        }
        if self.uvs.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("uv outside [0,1]".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if self.uv_area(f).abs() < 1e-14 {
                return Err(Error::InvalidInput(format!(
                    "face {fi} is degenerate in uv space"
                )));
            }
        }
        Ok(())
    }

    /// Signed UV-space area of a face (twice the triangle area).
    pub fn uv_area(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = [self.uvs[f[0]], self.uvs[f[1]], self.uvs[f[2]]];
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }

    pub fn same_topology(&self, other: &TopologyMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn scene_scale(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        if self.vertices.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }

    /// Same topology and UVs, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Self {
        Self {
            vertices,
            faces: self.faces.clone(),
            uvs: self.uvs.clone(),
        }
    }
}

#[cfg(test)]
pub(crate) mod test_meshes {
    use super::*;

    /// Unit right triangle in the z = 0 plane with matching UVs.
    pub fn unit_triangle() -> TopologyMesh {
        TopologyMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2]],
            uvs: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// `n × n` quad grid over the unit UV square, lifted by `height(u, v)`.
    pub fn grid(n: usize, pos: impl Fn(f64, f64) -> Vec3) -> TopologyMesh {
        let mut vertices = Vec::new();
        let mut uvs = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let (u, v) = (j as f64 / n as f64, i as f64 / n as f64);
                vertices.push(pos(u, v));
                uvs.push([u, v]);
            }
        }
        let mut faces = Vec::new();
        let id = |i: usize, j: usize| i * (n + 1) + j;
        for i in 0..n {
            for j in 0..n {
                faces.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
            }
        }
        TopologyMesh {
            vertices,
            faces,
            uvs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_indices_and_degenerate_uvs() {
        let mut m = test_meshes::unit_triangle();
        assert!(m.validate().is_ok());
        m.faces[0][2] = 7;
        assert!(m.validate().is_err());
        let mut m = test_meshes::unit_triangle();
        m.uvs[2] = [0.5, 0.0];
        assert!(m.validate().is_err());
    }
}
