//! Indexed triangle meshes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Per-vertex unit normals.
    pub normals: Vec<Vec3>,
}

pub const MIN_FACE_AREA: f64 = 1e-14;

impl TriangleMesh {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    /// Unnormalised `(b − a) × (c − a)`.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = *self.positions.first()?;
        let (lo, hi) = self
            .positions
            .iter()
            .fold((first, first), |(lo, hi), &p| (lo.min_elem(p), hi.max_elem(p)));
        Some(Aabb::new(lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.normals.len() != n {
            return Err(Error::validation("mesh needs exactly one normal per vertex"));
        }
        if self.positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("mesh has non-finite vertex positions"));
        }
        for (i, nrm) in self.normals.iter().enumerate() {
            if (nrm.norm() - 1.0).abs() > 1e-4 {
                return Err(Error::validation(format!("vertex {i} normal is not unit length")));
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= n) {
                return Err(Error::validation(format!("face {f} indexes past the vertex array")));
            }
            if self.face_area(f) <= MIN_FACE_AREA {
                return Err(Error::validation(format!("face {f} is degenerate")));
            }
        }
        Ok(())
    }

    /// Normals from area-weighted face normals.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::ZERO; self.positions.len()];
        for f in 0..self.faces.len() {
            let c = self.face_cross(f);
            for &v in &self.faces[f] {
                acc[v as usize] += c;
            }
        }
        self.normals = acc.into_iter().map(|n| n.normalized()).collect();
    }

    pub fn translated(&self, offset: Vec3) -> TriangleMesh {
        TriangleMesh {
            positions: self.positions.iter().map(|&p| p + offset).collect(),
            ..self.clone()
        }
    }

    /// Drop unreferenced vertices, keeping the relative order of the rest.
    pub fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.positions.len()];
        for f in &self.faces {
            for &v in f {
                remap[v as usize] = 0;
            }
        }
        let mut next = 0u32;
        let mut positions = Vec::new();
        let mut normals = Vec::new();
        for (i, r) in remap.iter_mut().enumerate() {
            if *r == 0 {
                *r = next;
                next += 1;
                positions.push(self.positions[i]);
                if i < self.normals.len() {
                    normals.push(self.normals[i]);
                }
            }
        }
        for f in &mut self.faces {
            for v in f.iter_mut() {
                *v = remap[*v as usize];
            }
        }
        self.positions = positions;
        self.normals = normals;
    }

    /// Edges used by other than exactly two faces (`(boundary, non_manifold)` counts).
    pub fn manifold_defects(&self) -> (usize, usize) {
        let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = edges.values().filter(|&&c| c == 1).count();
        let non_manifold = edges.values().filter(|&&c| c > 2).count();
        (boundary, non_manifold)
    }

    /// Subdivided icosahedron projected onto a sphere.
    pub fn icosphere(subdivisions: usize, radius: f64) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pos: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let mut m = [0u32; 3];
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    m[k] = *mid.entry(key).or_insert_with(|| {
                        pos.push(((pos[a as usize] + pos[b as usize]) * 0.5).normalized());
                        (pos.len() - 1) as u32
                    });
                }
                next.push([f[0], m[0], m[2]]);
                next.push([f[1], m[1], m[0]]);
                next.push([f[2], m[2], m[1]]);
                next.push([m[0], m[1], m[2]]);
            }
            faces = next;
        }
        TriangleMesh {
            normals: pos.clone(),
            positions: pos.into_iter().map(|p| p * radius).collect(),
            faces,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = TriangleMesh::icosphere(2, 1.0);
        assert_eq!(m.face_count(), 320);
        m.validate().unwrap();
        assert_eq!(m.manifold_defects(), (0, 0));
        for f in 0..m.face_count() {
            let [a, b, c] = m.corners(f);
            assert!(m.face_cross(f).dot(a + b + c) > 0.0);
        }
    }
}
