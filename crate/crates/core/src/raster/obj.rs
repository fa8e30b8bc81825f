//! Wavefront OBJ/MTL reading and writing.
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! lossless and repeated writes are byte-identical. OBJ texture coordinates
//! have `v` pointing up the image, the flip of the in-memory atlas
//! convention, so `vt` lines store `1 − v`.

use std::fmt::Write as _;
use std::path::Path;

use super::atlas::UvAtlas;
use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

pub fn obj_string(mesh: &TriangleMesh, atlas: Option<&UvAtlas>, mtl: Option<(&str, &str)>) -> String {
    let mut s = String::new();
    if let Some((lib, _)) = mtl {
        writeln!(s, "mtllib {lib}").unwrap();
    }
    for p in &mesh.positions {
        writeln!(s, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    for n in &mesh.normals {
        writeln!(s, "vn {} {} {}", n.x, n.y, n.z).unwrap();
    }
    if let Some(a) = atlas {
        for tri in &a.uvs {
            for uv in tri {
                writeln!(s, "vt {} {}", uv[0], 1.0 - uv[1]).unwrap();
            }
        }
    }
    if let Some((_, name)) = mtl {
        writeln!(s, "usemtl {name}").unwrap();
    }
    for (fi, f) in mesh.faces.iter().enumerate() {
        let [a, b, c] = f.map(|v| v + 1);
        if atlas.is_some() {
            let t = 3 * fi as u32 + 1;
            writeln!(s, "f {a}/{t}/{a} {b}/{}/{b} {c}/{}/{c}", t + 1, t + 2).unwrap();
        } else {
            writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}").unwrap();
        }
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh, atlas: Option<&UvAtlas>, mtl: Option<(&str, &str)>) -> Result<()> {
    std::fs::write(path, obj_string(mesh, atlas, mtl)).map_err(|e| Error::io(path, e))
}

/// Material file naming the feature planes; `map_Kd` points at the first.
pub fn mtl_string(material: &str, planes: &[String]) -> String {
    let mut s = format!("newmtl {material}\nKa 0 0 0\nKd 1 1 1\nKs 0 0 0\nillum 1\n");
    if let Some(first) = planes.first() {
        writeln!(s, "map_Kd {first}").unwrap();
    }
    for p in planes.iter().skip(1) {
        writeln!(s, "# feature plane {p}").unwrap();
    }
    s
}

/// Parsed OBJ: mesh plus per-face UVs when every face has them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjData {
    pub mesh: TriangleMesh,
    pub face_uvs: Option<Vec<[[f64; 2]; 3]>>,
    pub mtllib: Option<String>,
}

pub fn parse_obj(text: &str) -> Result<ObjData> {
    let bad = |line: usize, msg: &str| Error::format("OBJ", format!("line {}: {msg}", line + 1));
    let mut pos = Vec::new();
    let mut nrm = Vec::new();
    let mut tex = Vec::new();
    let mut faces = Vec::new();
    let mut face_uv_idx: Vec<Option<[usize; 3]>> = Vec::new();
    let mut face_n_idx: Vec<Option<[usize; 3]>> = Vec::new();
    let mut mtllib = None;
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let nums = |it: std::str::SplitWhitespace, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = it
                .take(n)
                .map(|t| t.parse::<f64>().map_err(|_| bad(ln, "bad number")))
                .collect::<Result<_>>()?;
            if v.len() != n {
                return Err(bad(ln, "too few components"));
            }
            Ok(v)
        };
        match tag {
            "v" => {
                let v = nums(it, 3)?;
                pos.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vn" => {
                let v = nums(it, 3)?;
                nrm.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = nums(it, 2)?;
                tex.push([v[0], 1.0 - v[1]]);
            }
            "f" => {
                let refs: Vec<&str> = it.collect();
                if refs.len() != 3 {
                    return Err(bad(ln, "only triangles are supported"));
                }
                let mut vi = [0u32; 3];
                let mut ti = [0usize; 3];
                let mut ni = [0usize; 3];
                let (mut has_t, mut has_n) = (true, true);
                for (k, r) in refs.iter().enumerate() {
                    let parts: Vec<&str> = r.split('/').collect();
                    let idx = |s: &str, len: usize| -> Result<usize> {
                        let i: i64 = s.parse().map_err(|_| bad(ln, "bad index"))?;
                        let i = if i < 0 { len as i64 + i } else { i - 1 };
                        if i < 0 || i as usize >= len {
                            return Err(bad(ln, "index out of range"));
                        }
                        Ok(i as usize)
                    };
                    vi[k] = idx(parts[0], pos.len())? as u32;
                    match parts.get(1) {
                        Some(t) if !t.is_empty() => ti[k] = idx(t, tex.len())?,
                        _ => has_t = false,
                    }
                    match parts.get(2) {
                        Some(n) if !n.is_empty() => ni[k] = idx(n, nrm.len())?,
                        _ => has_n = false,
                    }
                }
                faces.push(vi);
                face_uv_idx.push(has_t.then_some(ti));
                face_n_idx.push(has_n.then_some(ni));
            }
            "mtllib" => mtllib = it.next().map(str::to_string),
            _ => {}
        }
    }
    // Per-vertex normals: take the face-vertex normal references when they
    // agree with vertex indices, otherwise recompute.
    let mut normals = vec![None; pos.len()];
    for (f, ni) in faces.iter().zip(&face_n_idx) {
        if let Some(ni) = ni {
            for k in 0..3 {
                normals[f[k] as usize].get_or_insert(nrm[ni[k]]);
            }
        }
    }
    let mut mesh = TriangleMesh {
        positions: pos,
        faces,
        normals: Vec::new(),
    };
    if normals.iter().all(Option::is_some) && !normals.is_empty() {
        mesh.normals = normals.into_iter().map(Option::unwrap).collect();
    } else {
        mesh.recompute_normals();
    }
    let face_uvs = if !face_uv_idx.is_empty() && face_uv_idx.iter().all(Option::is_some) {
        Some(face_uv_idx.iter().map(|t| t.unwrap().map(|i| tex[i])).collect())
    } else {
        None
    };
    Ok(ObjData { mesh, face_uvs, mtllib })
}

pub fn read_obj(path: &Path) -> Result<ObjData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::atlas::unwrap_uv;

    #[test]
    fn round_trip_is_lossless() {
        let m = TriangleMesh::icosphere(2, 0.7);
        let a = unwrap_uv(&m, 256).unwrap();
        let text = obj_string(&m, Some(&a), Some(("mesh.mtl", "surface")));
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.mesh, m);
        let uvs = back.face_uvs.unwrap();
        for (x, y) in uvs.iter().flatten().zip(a.uvs.iter().flatten()) {
            assert!((x[0] - y[0]).abs() < 1e-15 && (x[1] - y[1]).abs() < 1e-15);
        }
        assert_eq!(back.mtllib.as_deref(), Some("mesh.mtl"));
        assert_eq!(obj_string(&m, Some(&a), None), obj_string(&m, Some(&a), None));
    }

    #[test]
    fn malformed_faces_are_rejected() {
        assert!(matches!(parse_obj("v 0 0 0\nf 1 2 3\n"), Err(Error::Format { .. })));
        assert!(matches!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n"), Err(Error::Format { .. })));
    }
}
