//! Coarse occupancy cache used to skip free space while sampling rays.

use rayon::prelude::*;

use super::ScalarField;
use crate::math::{Aabb, Vec3};

pub const DEFAULT_MASK_RES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub res: usize,
    pub bounds: Aabb,
    pub occupied: Vec<bool>,
}

impl MaskGrid {
    pub fn full(res: usize, bounds: Aabb) -> Self {
        MaskGrid {
            res,
            bounds,
            occupied: vec![true; res * res * res],
        }
    }

    pub fn empty(res: usize, bounds: Aabb) -> Self {
        MaskGrid {
            res,
            bounds,
            occupied: vec![false; res * res * res],
        }
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.bounds.extent().norm() / self.res as f64
    }

    /// Voxel `(x, y, z)` is occupied iff the smallest of its 8 corner SDF
    /// samples is below `tau` voxel diagonals.
    pub fn update(&mut self, field: &impl ScalarField, tau: f64) {
        let n = self.res + 1;
        let e = self.bounds.extent();
        let min = self.bounds.min;
        let res = self.res as f64;
        let corner_vals: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|z| {
                (0..n * n).map(move |i| {
                    let (y, x) = (i / n, i % n);
                    min + Vec3::new(e.x * x as f64 / res, e.y * y as f64 / res, e.z * z as f64 / res)
                })
            })
            .map(|p| field.value(p))
            .collect();
        let margin = tau * self.voxel_diagonal();
        let r = self.res;
        self.occupied = (0..r * r * r)
            .into_par_iter()
            .map(|v| {
                let (x, y, z) = (v % r, (v / r) % r, v / (r * r));
                let mut m = f64::INFINITY;
                for k in 0..8 {
                    let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
                    m = m.min(corner_vals[((z + dz) * n + (y + dy)) * n + (x + dx)]);
                }
                m < margin
            })
            .collect();
    }

    pub fn voxel_index(&self, p: Vec3) -> Option<usize> {
        let e = self.bounds.extent();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] - self.bounds.min[a]) / e[a];
            if !(0.0..=1.0).contains(&u) {
                return None;
            }
            idx[a] = ((u * self.res as f64) as usize).min(self.res - 1);
        }
        Some((idx[2] * self.res + idx[1]) * self.res + idx[0])
    }

    pub fn is_occupied(&self, p: Vec3) -> bool {
        self.voxel_index(p).map(|i| self.occupied[i]).unwrap_or(false)
    }

    pub fn occupancy(&self) -> f64 {
        self.occupied.iter().filter(|&&o| o).count() as f64 / self.occupied.len() as f64
    }
}
