use super::TopologyMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + v * ab;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + w * ac;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }
    let denom = va + vb + vc;
    if denom.abs() < 1e-300 {
        // Degenerate triangle: fall back to the closest edge point.
        return [(*a, *b), (*b, *c), (*c, *a)]
            .iter()
            .map(|(s, e)| closest_on_segment(p, s, e))
            .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    a + ab * v + ac * w
}

fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let d = b - a;
    let l = d.norm_squared();
    if l < 1e-300 {
        return *a;
    }
    a + d * ((p - a).dot(&d) / l).clamp(0.0, 1.0)
}

pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (closest_point_on_triangle(p, a, b, c) - p).norm()
}

/// Mean vertex-to-vertex distance in millimetres (meshes in metres).
pub fn p2p_mm(pred: &TopologyMesh, gt: &TopologyMesh) -> Result<f64> {
    if pred.vertices.len() != gt.vertices.len() {
        return Err(Error::TopologyMismatch {
            pred: pred.vertices.len(),
            gt: gt.vertices.len(),
        });
    }
    if pred.vertices.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .vertices
        .iter()
        .zip(&gt.vertices)
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(1000.0 * sum / pred.vertices.len() as f64)
}

/// Mean distance from each point to the nearest point on any `gt` face, in
/// millimetres.
pub fn p2s_mm(points: &[Vec3], gt: &TopologyMesh) -> f64 {
    if points.is_empty() || gt.faces.is_empty() {
        return 0.0;
    }
    let boxes: Vec<(Vec3, Vec3)> = gt
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = [gt.vertices[f[0]], gt.vertices[f[1]], gt.vertices[f[2]]];
            (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
        })
        .collect();
    let mut total = 0.0;
    for p in points {
        let mut best = f64::INFINITY;
        for (f, (lo, hi)) in gt.faces.iter().zip(&boxes) {
            let gap = (lo - p).sup(&(p - hi)).sup(&Vec3::zeros());
            if gap.norm_squared() >= best * best {
                continue;
            }
            let d = point_triangle_distance(
                p,
                &gt.vertices[f[0]],
                &gt.vertices[f[1]],
                &gt.vertices[f[2]],
            );
            best = best.min(d);
        }
        total += best;
    }
    1000.0 * total / points.len() as f64
}

/// `(P2P, P2S)` in millimetres. P2P needs matching vertex counts.
pub fn mesh_metrics(pred: &TopologyMesh, gt: &TopologyMesh) -> Result<(f64, f64)> {
    let p2p = p2p_mm(pred, gt)?;
    Ok((p2p, p2s_mm(&pred.vertices, gt)))
}
