//! Bounding-volume hierarchy for closest-hit ray casting against a mesh.

use super::mesh::TriangleMesh;
use crate::math::{Aabb, Ray, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `[start, start+count)` into `order`; inner: children at `start`, `start+1`.
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
    pub point: Vec3,
}

fn tri_bounds(t: &[Vec3; 3]) -> Aabb {
    Aabb::new(t[0].min_elem(t[1]).min_elem(t[2]), t[0].max_elem(t[1]).max_elem(t[2]))
}

fn union(a: &Aabb, b: &Aabb) -> Aabb {
    Aabb::new(a.min.min_elem(b.min), a.max.max_elem(b.max))
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Bvh {
        let tris: Vec<[Vec3; 3]> = (0..mesh.face_count()).map(|f| mesh.corners(f)).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::new(Vec3::ZERO, Vec3::ZERO),
            start: 0,
            count: 0,
        }];
        let centroid = |f: u32| {
            let t = &tris[f as usize];
            (t[0] + t[1] + t[2]) / 3.0
        };
        // Explicit stack of (node, start, end).
        let mut stack = vec![(0usize, 0usize, tris.len())];
        while let Some((ni, s, e)) = stack.pop() {
            let bounds = order[s..e]
                .iter()
                .map(|&f| tri_bounds(&tris[f as usize]))
                .reduce(|a, b| union(&a, &b))
                .unwrap_or(Aabb::new(Vec3::ZERO, Vec3::ZERO));
            nodes[ni].bounds = bounds;
            if e - s <= LEAF_SIZE {
                nodes[ni].start = s as u32;
                nodes[ni].count = (e - s) as u32;
                continue;
            }
            let cb = order[s..e]
                .iter()
                .map(|&f| centroid(f))
                .fold((Vec3::splat(f64::MAX), Vec3::splat(f64::MIN)), |(lo, hi), c| (lo.min_elem(c), hi.max_elem(c)));
            let ext = cb.1 - cb.0;
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            let mid = (s + e) / 2;
            order[s..e].select_nth_unstable_by(mid - s, |&a, &b| {
                centroid(a)[axis].total_cmp(&centroid(b)[axis]).then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                bounds,
                start: 0,
                count: 0,
            });
            nodes.push(Node {
                bounds,
                start: 0,
                count: 0,
            });
            nodes[ni].start = left as u32;
            nodes[ni].count = 0;
            stack.push((left, s, mid));
            stack.push((left + 1, mid, e));
        }
        Bvh { nodes, order, tris }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest intersection with `t > 0`, either side of the surface.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        if self.tris.is_empty() {
            return None;
        }
        let mut best: Option<(f64, u32)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let Some((t0, _)) = node.bounds.intersect(ray.origin, ray.dir) else {
                continue;
            };
            if let Some((bt, _)) = best {
                if t0 > bt {
                    continue;
                }
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some(t) = ray_triangle(ray, &self.tris[f as usize]) {
                        if best.map_or(true, |(bt, bf)| t < bt || (t == bt && f < bf)) {
                            best = Some((t, f));
                        }
                    }
                }
            } else {
                stack.push(node.start as usize + 1);
                stack.push(node.start as usize);
            }
        }
        best.map(|(t, face)| Hit {
            t,
            face,
            point: ray.at(t),
        })
    }
}

/// Möller–Trumbore, two-sided.
pub fn ray_triangle(ray: &Ray, t: &[Vec3; 3]) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = ray.dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - t[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let dist = e2.dot(q) * inv;
    (dist > 1e-12).then_some(dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force_on_icosphere() {
        let m = TriangleMesh::icosphere(3, 0.8);
        let bvh = Bvh::build(&m);
        let tris: Vec<[Vec3; 3]> = (0..m.face_count()).map(|f| m.corners(f)).collect();
        for i in 0..200 {
            let a = i as f64 * 0.731;
            let o = Vec3::new(2.0 * a.cos(), 1.5 * (a * 0.37).sin(), 2.0 * a.sin());
            let target = Vec3::new((a * 1.3).sin() * 0.5, (a * 0.7).cos() * 0.5, 0.1);
            let ray = Ray::new(o, target - o);
            let brute = tris
                .iter()
                .enumerate()
                .filter_map(|(f, t)| ray_triangle(&ray, t).map(|d| (d, f as u32)))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let hit = bvh.intersect(&ray).map(|h| (h.t, h.face));
            assert_eq!(hit, brute);
        }
    }

    #[test]
    fn hits_sphere_near_analytic_distance() {
        let m = TriangleMesh::icosphere(4, 1.0);
        let bvh = Bvh::build(&m);
        let h = bvh.intersect(&Ray::new(Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0))).unwrap();
        assert!((h.t - 4.0).abs() < 5e-3);
        assert!(bvh.intersect(&Ray::new(Vec3::new(0.0, 3.0, 5.0), Vec3::new(0.0, 0.0, -1.0))).is_none());
    }
}
