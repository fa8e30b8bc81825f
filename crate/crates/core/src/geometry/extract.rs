//! Zero-level-set extraction by marching tetrahedra (six tetrahedra per cube,
//! split around the main diagonal so neighbouring cubes share face diagonals).

use std::collections::HashMap;

use rayon::prelude::*;

use super::ScalarField;
use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::raster::mesh::{TriangleMesh, MIN_FACE_AREA};

pub const MIN_EXTRACT_RES: usize = 16;

const TETS: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7]];

/// Edge between two lattice vertices; equal endpoints mean "on a vertex".
type EdgeKey = (u32, u32);

pub fn extract_mesh(field: &impl ScalarField, bounds: &Aabb, resolution: usize) -> Result<TriangleMesh> {
    if resolution < MIN_EXTRACT_RES {
        return Err(Error::validation(format!(
            "extraction resolution must be at least {MIN_EXTRACT_RES}, got {resolution}"
        )));
    }
    let n = resolution + 1;
    let e = bounds.extent();
    let r = resolution as f64;
    let lattice = |x: usize, y: usize, z: usize| {
        bounds.min + Vec3::new(e.x * x as f64 / r, e.y * y as f64 / r, e.z * z as f64 / r)
    };
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|z| (0..n * n).map(move |i| (i % n, i / n, z)))
        .map(|(x, y, z)| field.value(lattice(x, y, z)))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("field produced non-finite values during extraction"));
    }
    let vid = |x: usize, y: usize, z: usize| ((z * n + y) * n + x) as u32;
    let pos_of = |id: u32| {
        let id = id as usize;
        lattice(id % n, (id / n) % n, id / (n * n))
    };

    // Per-slab triangle lists expressed as edge keys.
    let slabs: Vec<Vec<[EdgeKey; 3]>> = (0..resolution)
        .into_par_iter()
        .map(|z| {
            let mut tris = Vec::new();
            for y in 0..resolution {
                for x in 0..resolution {
                    let cube: [u32; 8] = std::array::from_fn(|k| vid(x + (k & 1), y + ((k >> 1) & 1), z + ((k >> 2) & 1)));
                    for tet in &TETS {
                        let v = tet.map(|k| cube[k]);
                        march_tet(&v, &values, &pos_of, &mut tris);
                    }
                }
            }
            tris
        })
        .collect();

    let mut index: HashMap<EdgeKey, u32> = HashMap::new();
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for tri in slabs.iter().flatten() {
        let f = tri.map(|key| {
            *index.entry(key).or_insert_with(|| {
                positions.push(edge_point(key, &values, &pos_of));
                (positions.len() - 1) as u32
            })
        });
        faces.push(f);
    }
    let mut mesh = TriangleMesh {
        positions,
        faces,
        normals: Vec::new(),
    };
    mesh.faces = (0..mesh.faces.len())
        .filter(|&f| mesh.face_area(f) > MIN_FACE_AREA)
        .map(|f| mesh.faces[f])
        .collect();
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    mesh.compact();
    mesh.normals = mesh
        .positions
        .par_iter()
        .map(|&p| {
            let g = field.gradient(p);
            let len = g.norm();
            if len > 1e-12 && len.is_finite() {
                g / len
            } else {
                Vec3::new(0.0, 0.0, 1.0)
            }
        })
        .collect();
    let (boundary, non_manifold) = mesh.manifold_defects();
    if boundary > 0 || non_manifold > 0 {
        log::warn!("extracted mesh is not closed: {boundary} boundary edges, {non_manifold} non-manifold edges");
    }
    Ok(mesh)
}

fn edge_point(key: EdgeKey, values: &[f64], pos_of: &impl Fn(u32) -> Vec3) -> Vec3 {
    let (a, b) = key;
    if a == b {
        return pos_of(a);
    }
    let (va, vb) = (values[a as usize], values[b as usize]);
    let t = va / (va - vb);
    let (pa, pb) = (pos_of(a), pos_of(b));
    pa + (pb - pa) * t
}

/// Crossings this close to a lattice vertex snap onto it, so near-zero
/// samples do not leave coincident unwelded vertices behind.
const SNAP: f64 = 1e-6;

fn edge_key(a: u32, b: u32, values: &[f64]) -> EdgeKey {
    let (va, vb) = (values[a as usize], values[b as usize]);
    let t = if va == 0.0 { 0.0 } else { va / (va - vb) };
    if t <= SNAP {
        (a, a)
    } else if t >= 1.0 - SNAP {
        (b, b)
    } else {
        (a.min(b), a.max(b))
    }
}

fn march_tet(v: &[u32; 4], values: &[f64], pos_of: &impl Fn(u32) -> Vec3, out: &mut Vec<[EdgeKey; 3]>) {
    // Zero counts as outside so every sign change is strict on one side.
    let inside: [bool; 4] = v.map(|i| values[i as usize] < 0.0);
    let n_in = inside.iter().filter(|&&b| b).count();
    if n_in == 0 || n_in == 4 {
        return;
    }
    let ins: Vec<usize> = (0..4).filter(|&k| inside[k]).collect();
    let outs: Vec<usize> = (0..4).filter(|&k| !inside[k]).collect();
    let key = |i: usize, o: usize| edge_key(v[i], v[o], values);
    let centroid = |ks: &[usize]| ks.iter().map(|&k| pos_of(v[k])).fold(Vec3::ZERO, |a, b| a + b) / ks.len() as f64;
    let outward = centroid(&outs) - centroid(&ins);
    let mut emit = |mut tri: [EdgeKey; 3]| {
        let p = tri.map(|k| edge_point(k, values, pos_of));
        if (p[1] - p[0]).cross(p[2] - p[0]).dot(outward) < 0.0 {
            tri.swap(1, 2);
        }
        out.push(tri);
    };
    match n_in {
        1 => emit([key(ins[0], outs[0]), key(ins[0], outs[1]), key(ins[0], outs[2])]),
        3 => emit([key(ins[0], outs[0]), key(ins[1], outs[0]), key(ins[2], outs[0])]),
        _ => {
            // Quad a-b-c-d around the tetrahedron.
            let a = key(ins[0], outs[0]);
            let b = key(ins[0], outs[1]);
            let c = key(ins[1], outs[1]);
            let d = key(ins[1], outs[0]);
            emit([a, b, c]);
            emit([a, c, d]);
        }
    }
}
