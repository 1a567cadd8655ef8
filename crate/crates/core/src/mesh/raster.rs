use super::TopologyMesh;
use crate::math::{Camera, Vec2, Vec3};

pub const NO_FACE: u32 = u32::MAX;

/// Per-pixel nearest-surface record produced by [`rasterize`].
#[derive(Clone, Debug, PartialEq)]
pub struct RasterBuffer {
    pub width: usize,
    pub height: usize,
    /// Face index or [`NO_FACE`].
    pub face: Vec<u32>,
    /// Perspective-correct barycentrics of the face's three vertices.
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub uv: Vec<[f64; 2]>,
}

impl RasterBuffer {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            face: vec![NO_FACE; n],
            bary: vec![[0.0; 3]; n],
            depth: vec![f64::INFINITY; n],
            uv: vec![[0.0; 2]; n],
        }
    }

    #[inline]
    pub fn covered(&self, idx: usize) -> bool {
        self.face[idx] != NO_FACE
    }

    pub fn covered_count(&self) -> usize {
        self.face.iter().filter(|f| **f != NO_FACE).count()
    }
}

/// Z-buffered rasterisation of `mesh` into `camera`, sampling at pixel
/// centres. Faces with any vertex at or behind the camera plane are skipped.
/// Depth ties keep the lower face index.
pub fn rasterize(mesh: &TopologyMesh, camera: &Camera) -> RasterBuffer {
    let k = &camera.intrinsics;
    let mut buf = RasterBuffer::empty(k.width, k.height);
    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| camera.pose.apply(v)).collect();
    let screen: Vec<Vec2> = cam_pts
        .iter()
        .map(|p| Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
        .collect();

    for (fi, f) in mesh.faces.iter().enumerate() {
        let z = [cam_pts[f[0]].z, cam_pts[f[1]].z, cam_pts[f[2]].z];
        if z.iter().any(|z| *z <= 1e-9) {
            continue;
        }
        let s = [screen[f[0]], screen[f[1]], screen[f[2]]];
        let area = edge(&s[0], &s[1], &s[2]);
        if area.abs() < 1e-18 {
            continue;
        }
        let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        // Pixel centres x + 0.5 inside [min_x, max_x].
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(k.width as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(k.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let inv_z = [1.0 / z[0], 1.0 / z[1], 1.0 / z[2]];
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                let b0 = edge(&s[1], &s[2], &p) / area;
                let b1 = edge(&s[2], &s[0], &p) / area;
                let b2 = edge(&s[0], &s[1], &p) / area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let w = [b0 * inv_z[0], b1 * inv_z[1], b2 * inv_z[2]];
                let sw = w[0] + w[1] + w[2];
                let depth = 1.0 / sw;
                let idx = py * k.width + px;
                if depth < buf.depth[idx] {
                    let bary = [w[0] / sw, w[1] / sw, w[2] / sw];
                    let uv = [0, 1].map(|c| {
                        bary[0] * mesh.uvs[f[0]][c]
                            + bary[1] * mesh.uvs[f[1]][c]
                            + bary[2] * mesh.uvs[f[2]][c]
                    });
                    buf.face[idx] = fi as u32;
                    buf.bary[idx] = bary;
                    buf.depth[idx] = depth;
                    buf.uv[idx] = uv;
                }
            }
        }
    }
    buf
}

#[inline]
fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}
