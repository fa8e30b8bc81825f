//! Quadric-error edge-collapse simplification (Garland–Heckbert style).
//!
//! Collapses keep the mesh manifold (link condition), never flip a face, and
//! leave boundary vertices in place.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::mesh::{TriangleMesh, MIN_FACE_AREA};
use crate::math::{Mat3, Vec3};

/// Symmetric 4×4 quadric, upper triangle row-major.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3, d: f64, weight: f64) -> Self {
        let p = [n.x, n.y, n.z, d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = weight * p[i] * p[j];
                k += 1;
            }
        }
        Quadric(q)
    }

    fn add(&mut self, o: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a += b;
        }
    }

    fn sum(&self, o: &Quadric) -> Quadric {
        let mut q = *self;
        q.add(o);
        q
    }

    fn eval(&self, v: Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (v.x, v.y, v.z);
        q[0] * x * x + 2.0 * q[1] * x * y + 2.0 * q[2] * x * z + 2.0 * q[3] * x + q[4] * y * y + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimiser of the quadric, if the 3×3 block is well conditioned.
    fn optimum(&self) -> Option<Vec3> {
        let q = &self.0;
        let a = Mat3([[q[0], q[1], q[2]], [q[1], q[4], q[5]], [q[2], q[5], q[7]]]);
        let scale = q[0].abs() + q[4].abs() + q[7].abs();
        if scale == 0.0 || a.determinant().abs() < 1e-10 * scale.powi(3) {
            return None;
        }
        let inv = a.inverse()?;
        Some(-inv.mul_vec(Vec3::new(q[3], q[6], q[8])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    stamp: (u32, u32),
    target: Vec3,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        // Min-heap on cost, ties broken by vertex ids for determinism.
        o.cost
            .total_cmp(&self.cost)
            .then_with(|| (o.a, o.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    alive: Vec<bool>,
    incident: Vec<Vec<u32>>,
    quadric: Vec<Quadric>,
    version: Vec<u32>,
    locked: Vec<bool>,
}

impl State {
    fn neighbours(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self.incident[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quadric[a as usize].sum(&self.quadric[b as usize]);
        let (pa, pb) = (self.pos[a as usize], self.pos[b as usize]);
        let mut options = vec![pa, pb, (pa + pb) * 0.5];
        if let Some(o) = q.optimum() {
            // Stay near the edge; far optima come from nearly flat regions.
            if (o - (pa + pb) * 0.5).norm() <= 2.0 * (pb - pa).norm() {
                options.insert(0, o);
            }
        }
        let (target, cost) = options
            .into_iter()
            .map(|p| (p, q.eval(p).max(0.0)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        Candidate {
            cost,
            a,
            b,
            stamp: (self.version[a as usize], self.version[b as usize]),
            target,
        }
    }

    fn face_normal(&self, f: [u32; 3]) -> Vec3 {
        let [a, b, c] = f.map(|i| self.pos[i as usize]);
        (b - a).cross(c - a)
    }

    /// Checks the link condition and that no surviving face flips or degenerates.
    fn collapse_ok(&self, a: u32, b: u32, target: Vec3) -> bool {
        let shared: Vec<u32> = self.incident[a as usize]
            .iter()
            .copied()
            .filter(|f| self.faces[*f as usize].contains(&b))
            .collect();
        if shared.len() != 2 {
            return false;
        }
        let na: HashSet<u32> = self.neighbours(a).into_iter().collect();
        let common = self.neighbours(b).into_iter().filter(|w| na.contains(w)).count();
        if common != 2 {
            return false;
        }
        for &v in &[a, b] {
            for &f in &self.incident[v as usize] {
                let face = self.faces[f as usize];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let before = self.face_normal(face);
                let moved = face.map(|i| if i == a || i == b { u32::MAX } else { i });
                let corners = moved.map(|i| if i == u32::MAX { target } else { self.pos[i as usize] });
                let after = (corners[1] - corners[0]).cross(corners[2] - corners[0]);
                if 0.5 * after.norm() <= MIN_FACE_AREA || after.dot(before) <= 0.2 * after.norm() * before.norm() {
                    return false;
                }
            }
        }
        true
    }
}

/// Simplify `mesh` until at most `target_faces` faces remain or no legal
/// collapse is left. Normals are recomputed from the new faces.
pub fn simplify(mesh: &TriangleMesh, target_faces: usize) -> TriangleMesh {
    let nv = mesh.vertex_count();
    let mut st = State {
        pos: mesh.positions.clone(),
        faces: mesh.faces.clone(),
        alive: vec![true; mesh.face_count()],
        incident: vec![Vec::new(); nv],
        quadric: vec![Quadric::default(); nv],
        version: vec![0; nv],
        locked: vec![false; nv],
    };
    for (fi, f) in mesh.faces.iter().enumerate() {
        let n = st.face_normal(*f);
        let len = n.norm();
        if len == 0.0 {
            continue;
        }
        let unit = n / len;
        let q = Quadric::plane(unit, -unit.dot(st.pos[f[0] as usize]), 0.5 * len);
        for &v in f {
            st.incident[v as usize].push(fi as u32);
            st.quadric[v as usize].add(&q);
        }
    }
    let mut edge_faces: std::collections::HashMap<(u32, u32), u32> = Default::default();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edge_faces.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(edge_faces.len());
    for (&(a, b), &c) in &edge_faces {
        if c != 2 {
            st.locked[a as usize] = true;
            st.locked[b as usize] = true;
        }
        edges.push((a, b));
    }
    edges.sort_unstable();
    let mut heap: BinaryHeap<Candidate> = edges.iter().map(|&(a, b)| st.candidate(a, b)).collect();
    let mut faces_left = mesh.face_count();

    while faces_left > target_faces {
        let Some(c) = heap.pop() else { break };
        let (a, b) = (c.a, c.b);
        if (st.version[a as usize], st.version[b as usize]) != c.stamp {
            continue;
        }
        if st.locked[a as usize] || st.locked[b as usize] || !st.collapse_ok(a, b, c.target) {
            continue;
        }
        // Merge b into a.
        let fb = std::mem::take(&mut st.incident[b as usize]);
        let mut fa = std::mem::take(&mut st.incident[a as usize]);
        for f in fb {
            let face = &mut st.faces[f as usize];
            if face.contains(&a) {
                st.alive[f as usize] = false;
                faces_left -= 1;
                for &w in face.iter() {
                    if w != a && w != b {
                        st.incident[w as usize].retain(|&g| g != f);
                    }
                }
            } else {
                for w in face.iter_mut() {
                    if *w == b {
                        *w = a;
                    }
                }
                fa.push(f);
            }
        }
        fa.retain(|&f| st.alive[f as usize]);
        fa.sort_unstable();
        st.incident[a as usize] = fa;
        st.pos[a as usize] = c.target;
        let qb = st.quadric[b as usize];
        st.quadric[a as usize].add(&qb);
        st.version[a as usize] += 1;
        st.version[b as usize] += 1;
        for w in st.neighbours(a) {
            heap.push(st.candidate(a, w));
        }
    }

    let mut out = TriangleMesh {
        positions: st.pos,
        faces: st
            .faces
            .into_iter()
            .zip(st.alive)
            .filter_map(|(f, alive)| alive.then_some(f))
            .collect(),
        normals: Vec::new(),
    };
    out.normals = vec![Vec3::ZERO; out.positions.len()];
    out.compact();
    out.recompute_normals();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::extract_mesh;
    use crate::math::Aabb;

    #[test]
    fn sphere_simplifies_to_target_and_stays_closed() {
        let r = 0.6;
        let m = extract_mesh(&|p: Vec3| p.norm() - r, &Aabb::cube(1.0), 40).unwrap();
        assert_eq!(m.manifold_defects(), (0, 0));
        let s = simplify(&m, 2000);
        assert!(s.face_count() <= 2000, "{} faces left", s.face_count());
        assert!(s.face_count() > 1500);
        s.validate().unwrap();
        assert_eq!(s.manifold_defects(), (0, 0));
        // Vertices stay close to the sphere and faces keep pointing outward.
        for p in &s.positions {
            assert!((p.norm() - r).abs() < 5e-3, "vertex off surface by {}", p.norm() - r);
        }
        for f in 0..s.face_count() {
            let [a, b, c] = s.corners(f);
            assert!(s.face_cross(f).dot(a + b + c) > 0.0);
        }
        assert!((s.surface_area() - 4.0 * std::f64::consts::PI * r * r).abs() < 0.05);
    }

    #[test]
    fn target_above_face_count_is_identity_up_to_normals() {
        let m = TriangleMesh::icosphere(1, 1.0);
        let s = simplify(&m, 10_000);
        assert_eq!(s.faces, m.faces);
        assert_eq!(s.positions, m.positions);
    }
}
