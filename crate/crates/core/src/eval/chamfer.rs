//! Chamfer distance between surfaces sampled by ray casting from a ring of
//! cameras on a view sphere.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;

use crate::dataset::Primitive;
use crate::error::{Error, Result};
use crate::math::{Aabb, Ray, Vec3};
use crate::raster::{Bvh, TriangleMesh};

pub const DEFAULT_CAMERAS: usize = 200;
pub const DEFAULT_POINTS: usize = 100_000;

/// Anything rays can be cast against.
pub trait RaySurface: Sync {
    /// Distance to the first hit along a unit-direction ray.
    fn cast(&self, ray: &Ray) -> Option<f64>;
    fn bounds(&self) -> Aabb;
}

pub struct MeshSurface {
    bvh: Bvh,
    bounds: Aabb,
}

impl MeshSurface {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let bounds = mesh
            .bounds()
            .filter(|_| !mesh.is_empty())
            .ok_or_else(|| Error::validation("Chamfer distance needs non-empty meshes"))?;
        Ok(MeshSurface {
            bvh: Bvh::build(mesh),
            bounds,
        })
    }
}

impl RaySurface for MeshSurface {
    fn cast(&self, ray: &Ray) -> Option<f64> {
        self.bvh.intersect(ray).map(|h| h.t)
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }
}

impl RaySurface for Primitive {
    fn cast(&self, ray: &Ray) -> Option<f64> {
        self.intersect(ray)
    }

    fn bounds(&self) -> Aabb {
        Aabb::cube(self.bounding_radius())
    }
}

/// Ray layout: `cameras` eyes on a Fibonacci sphere of radius `2·radius`
/// around `center`, each casting a `grid × grid` fan whose image plane just
/// encloses the sphere of radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRig {
    pub center: Vec3,
    pub radius: f64,
    pub cameras: usize,
    pub grid: usize,
}

impl RayRig {
    pub fn rays(&self) -> impl IndexedParallelIterator<Item = Ray> + '_ {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let g = self.grid;
        // Half-angle of the cone tangent to the bounding sphere from distance 2r.
        let half = (0.5f64).asin().tan();
        (0..self.cameras * g * g).into_par_iter().map(move |k| {
            let (c, p) = (k / (g * g), k % (g * g));
            let z = 1.0 - (2.0 * c as f64 + 1.0) / self.cameras as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * c as f64;
            let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            let eye = self.center + dir * (2.0 * self.radius);
            let fwd = -dir;
            let helper = if fwd.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
            let right = fwd.cross(helper).normalized();
            let up = right.cross(fwd);
            let (i, j) = ((p % g) as f64, (p / g) as f64);
            let sx = ((i + 0.5) / g as f64 * 2.0 - 1.0) * half;
            let sy = ((j + 0.5) / g as f64 * 2.0 - 1.0) * half;
            Ray::new(eye, fwd + right * sx + up * sy)
        })
    }
}

/// Hit points of every rig ray on `surface`, in ray order.
pub fn sample_surface(surface: &dyn RaySurface, rig: &RayRig) -> Vec<Vec3> {
    rig.rays().filter_map(|ray| surface.cast(&ray).map(|t| ray.at(t))).collect()
}

/// Evenly strided subset of exactly `n` points (or all when fewer).
fn thin(points: Vec<Vec3>, n: usize) -> Vec<Vec3> {
    if points.len() <= n {
        return points;
    }
    let len = points.len();
    (0..n).map(|i| points[i * len / n]).collect()
}

/// Mean distance from each point of `from` to its nearest neighbour in `to`.
pub fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let pts: Vec<[f64; 3]> = to.iter().map(|p| p.to_array()).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts);
    let sum: f64 = from
        .par_iter()
        .map(|p| tree.nearest_one::<SquaredEuclidean>(&p.to_array()).distance.sqrt())
        .sum();
    sum / from.len() as f64
}

/// Bi-directional mean nearest-neighbour distance between point sets.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("Chamfer distance needs non-empty point sets"));
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

/// Sampled point sets of two surfaces using identical rays.
pub fn sample_pair(a: &dyn RaySurface, b: &dyn RaySurface, n_points: usize, cameras: usize) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    if n_points == 0 || cameras == 0 {
        return Err(Error::validation("point and camera counts must be positive"));
    }
    let (ba, bb) = (a.bounds(), b.bounds());
    let union = Aabb::new(ba.min.min_elem(bb.min), ba.max.max_elem(bb.max));
    let mut rig = RayRig {
        center: union.center(),
        radius: union.radius().max(1e-9),
        cameras,
        grid: ((n_points as f64 / cameras as f64).sqrt().ceil() as usize).max(2),
    };
    let mut pa = sample_surface(a, &rig);
    let mut pb = sample_surface(b, &rig);
    let fewest = pa.len().min(pb.len());
    if fewest == 0 {
        return Err(Error::validation("no sampling ray hit one of the surfaces"));
    }
    if fewest < n_points {
        let scale = (n_points as f64 / fewest as f64).sqrt() * 1.05;
        rig.grid = (rig.grid as f64 * scale).ceil() as usize;
        pa = sample_surface(a, &rig);
        pb = sample_surface(b, &rig);
    }
    Ok((thin(pa, n_points), thin(pb, n_points)))
}

pub fn chamfer_surfaces(a: &dyn RaySurface, b: &dyn RaySurface, n_points: usize) -> Result<f64> {
    let (pa, pb) = sample_pair(a, b, n_points, DEFAULT_CAMERAS)?;
    chamfer_points(&pa, &pb)
}

/// Chamfer distance between two meshes from about `n_points` ray hits each.
pub fn chamfer(a: &TriangleMesh, b: &TriangleMesh, n_points: usize) -> Result<f64> {
    chamfer_surfaces(&MeshSurface::new(a)?, &MeshSurface::new(b)?, n_points)
}
