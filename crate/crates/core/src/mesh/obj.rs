use std::fmt::Write as _;
use std::path::Path;

use super::TopologyMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Writes the `v`/`vt`/`f a/a b/b c/c` OBJ subset. UVs are written as-is.
pub fn write_obj(mesh: &TopologyMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

pub(crate) fn obj_string(mesh: &TopologyMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 64);
    for v in &mesh.vertices {
        // `{:?}` prints the shortest string that round-trips the f64.
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(s, "vt {:?} {:?}", uv[0], uv[1]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {0}/{0} {1}/{1} {2}/{2}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TopologyMesh> {
    parse_obj(&std::fs::read_to_string(path)?)
}

pub(crate) fn parse_obj(text: &str) -> Result<TopologyMesh> {
    let bad = |line: usize, msg: &str| Error::format("obj", format!("line {}: {msg}", line + 1));
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let nums = |it: std::str::SplitWhitespace, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = it
                .take(n)
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(ln, "bad number"))?;
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad(ln, "too few values"))
            }
        };
        match it.next() {
            Some("v") => {
                let v = nums(it, 3)?;
                vertices.push(Vec3::new(v[0], v[1], v[2]));
            }
            Some("vt") => {
                let v = nums(it, 2)?;
                uvs.push([v[0], v[1]]);
            }
            Some("f") => {
                let mut f = [0usize; 3];
                let mut count = 0;
                for (k, tok) in it.enumerate() {
                    if k >= 3 {
                        return Err(bad(ln, "only triangles are supported"));
                    }
                    let mut parts = tok.split('/');
                    let vi: usize = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| bad(ln, "bad face index"))?;
                    if let Some(ti) = parts.next() {
                        let ti: usize = ti.parse().map_err(|_| bad(ln, "bad uv index"))?;
                        if ti != vi {
                            return Err(bad(ln, "vertex and uv indices must match"));
                        }
                    }
                    if vi == 0 {
                        return Err(bad(ln, "indices are 1-based"));
                    }
                    f[k] = vi - 1;
                    count += 1;
                }
                if count != 3 {
                    return Err(bad(ln, "face needs three vertices"));
                }
                faces.push(f);
            }
            _ => {}
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
