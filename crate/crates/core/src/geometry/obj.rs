//! Wavefront OBJ subset: `v`, `vt`, `vn`, `f`. Polygons are fan-triangulated.

use super::{GeometryError, Mesh};
use crate::math::Vec3;
use std::collections::HashMap;

#[derive(Clone, Copy)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

fn resolve(raw: &str, count: usize, line: usize) -> Result<usize, GeometryError> {
    let idx: i64 = raw
        .parse()
        .map_err(|_| GeometryError::Parse { line, message: format!("bad index {raw:?}") })?;
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        count as i64 + idx
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(GeometryError::IndexOutOfRange { line, index: idx, count });
    }
    Ok(resolved as usize)
}

fn floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N], GeometryError> {
    if parts.len() < N {
        return Err(GeometryError::Parse { line, message: format!("expected {N} components") });
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| GeometryError::Parse { line, message: format!("bad number {p:?}") })?;
        if !o.is_finite() {
            return Err(GeometryError::NonFinite { line });
        }
    }
    Ok(out)
}

/// Tiled texture coordinates are wrapped back into [0, 1].
fn wrap_unit(c: f64) -> f64 {
    if (0.0..=1.0).contains(&c) {
        c
    } else {
        c.rem_euclid(1.0)
    }
}

/// Loads an OBJ document into an indexed triangle mesh.
///
/// Corners without a normal get the face normal of their triangle; corners
/// without texture coordinates get a planar projection of the vertex position.
pub fn load_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[Corner; 3]> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let [x, y, z] = floats::<3>(&rest, line)?;
                positions.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let uv = if rest.len() == 1 { [floats::<1>(&rest, line)?[0], 0.0] } else { floats::<2>(&rest, line)? };
                texcoords.push(uv);
            }
            "vn" => {
                let [x, y, z] = floats::<3>(&rest, line)?;
                let n = Vec3::new(x, y, z);
                if n.length() < 1e-12 {
                    return Err(GeometryError::Parse { line, message: "zero-length normal".into() });
                }
                normals.push(n.normalized());
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(GeometryError::Parse { line, message: "face needs at least 3 vertices".into() });
                }
                let corners = rest
                    .iter()
                    .map(|tok| {
                        let mut it = tok.split('/');
                        let v = resolve(it.next().unwrap_or(""), positions.len(), line)?;
                        let vt = match it.next() {
                            Some(s) if !s.is_empty() => Some(resolve(s, texcoords.len(), line)?),
                            _ => None,
                        };
                        let vn = match it.next() {
                            Some(s) if !s.is_empty() => Some(resolve(s, normals.len(), line)?),
                            _ => None,
                        };
                        Ok(Corner { v, vt, vn })
                    })
                    .collect::<Result<Vec<_>, GeometryError>>()?;
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            // groups, objects, smoothing and material statements carry no geometry
            "o" | "g" | "s" | "usemtl" | "mtllib" | "l" | "p" => {}
            other => {
                log::debug!("obj line {line}: ignoring record {other:?}");
            }
        }
    }
    if faces.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }

    let planar = Mesh::planar_uvs(&positions);
    let mut mesh = Mesh::default();
    // (position, texcoord, normal source) -> vertex; a missing normal is keyed by triangle
    let mut dedup: HashMap<(usize, Option<usize>, Result<usize, usize>), u32> = HashMap::new();
    for (t, face) in faces.iter().enumerate() {
        let [a, b, c] = face.map(|k| positions[k.v]);
        let face_normal = (b - a).cross(c - a).normalized_or(Vec3::Z);
        let mut tri = [0u32; 3];
        for (slot, corner) in tri.iter_mut().zip(face) {
            let nkey = corner.vn.ok_or(t);
            let key = (corner.v, corner.vt, nkey);
            *slot = *dedup.entry(key).or_insert_with(|| {
                mesh.positions.push(positions[corner.v]);
                mesh.normals.push(corner.vn.map_or(face_normal, |n| normals[n]));
                let uv = corner.vt.map_or(planar[corner.v], |i| texcoords[i].map(wrap_unit));
                mesh.uvs.push(uv);
                (mesh.positions.len() - 1) as u32
            });
        }
        mesh.triangles.push(tri);
    }
    mesh.validate()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CUBE: &str = "\
# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn unit_cube_has_twelve_triangles() {
        let m = load_obj(CUBE).unwrap();
        assert_eq!(m.triangles.len(), 12);
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
        // per-face normals point outward
        let c = Vec3::splat(0.5);
        for t in 0..12 {
            let [a, _, _] = m.triangles[t];
            let n = m.normals[a as usize];
            assert!(n.dot(m.positions[a as usize] - c) > 0.0);
        }
    }

    #[test]
    fn quads_fan_triangulate() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nv 2 1 0\nf 1 2 3 4\nf 2 5 6 3\n";
        let m = load_obj(text).unwrap();
        assert_eq!(m.triangles.len(), 4);
        let pent = "v 0 0 0\nv 1 0 0\nv 1.5 1 0\nv 0.5 1.5 0\nv -0.5 1 0\nf 1 2 3 4 5\n";
        assert_eq!(load_obj(pent).unwrap().triangles.len(), 3);
    }

    #[test]
    fn out_of_range_index() {
        let bad = CUBE.replace("f 4 5 8", "f 4 5 9");
        assert_eq!(load_obj(&bad), Err(GeometryError::IndexOutOfRange { line: 21, index: 9, count: 8 }));
    }

    #[test]
    fn non_finite_and_empty() {
        assert_eq!(load_obj("v 0 nan 0\n"), Err(GeometryError::NonFinite { line: 1 }));
        assert_eq!(load_obj("v 0 0 0\nv 1 0 0\n"), Err(GeometryError::EmptyMesh));
        assert_eq!(load_obj(""), Err(GeometryError::EmptyMesh));
    }

    #[test]
    fn full_corner_syntax_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 2\nf -3/-3/-1 -2/-2/-1 -1/-1/-1\nf 1//1 2//1 3//1\n";
        let m = load_obj(text).unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert_eq!(m.uvs[1], [1.0, 0.0]);
        assert!((m.normals[0] - Vec3::Z).length() < 1e-12);
        // corners shared by position+normal dedup to three vertices for the second face
        assert_eq!(m.positions.len(), 6);
    }

    #[test]
    fn planar_uvs_synthesized() {
        let text = "v 0 0 0\nv 2 0 0\nv 2 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = load_obj(text).unwrap();
        for (p, uv) in m.positions.iter().zip(&m.uvs) {
            assert!((uv[0] - p.x / 2.0).abs() < 1e-12 && (uv[1] - p.y).abs() < 1e-12);
        }
    }
}
