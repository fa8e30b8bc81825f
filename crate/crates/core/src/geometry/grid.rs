//! Dense multi-resolution feature grids with coarse-to-fine level masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSchedule {
    pub levels: usize,
    pub min_res: usize,
    pub max_res: usize,
    pub channels: usize,
    /// β at step 0.
    pub beta_start: f64,
    /// Fraction of training over which β ramps linearly to `levels`.
    pub ramp_fraction: f64,
    /// Pin β for the whole run (coarse-only ablation).
    #[serde(default)]
    pub frozen_beta: Option<f64>,
}

impl Default for GridSchedule {
    fn default() -> Self {
        GridSchedule::desk()
    }
}

impl GridSchedule {
    pub fn desk() -> Self {
        GridSchedule {
            levels: 8,
            min_res: 16,
            max_res: 128,
            channels: 4,
            beta_start: 4.0,
            ramp_fraction: 0.6,
            frozen_beta: None,
        }
    }

    pub fn full() -> Self {
        GridSchedule {
            levels: 16,
            max_res: 4096,
            ..GridSchedule::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.channels < 1 {
            return Err(Error::validation("grid needs at least one level and one channel"));
        }
        if self.min_res < 1 || self.max_res < self.min_res {
            return Err(Error::validation("grid resolutions must satisfy 1 ≤ min ≤ max"));
        }
        let r = self.resolutions();
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!("grid resolutions are not strictly increasing: {r:?}")));
        }
        if !(self.ramp_fraction > 0.0 && self.ramp_fraction <= 1.0) {
            return Err(Error::validation("ramp_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Geometric progression from `min_res` to `max_res`.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.min_res];
        }
        let g = (self.max_res as f64 / self.min_res as f64).powf(1.0 / (self.levels - 1) as f64);
        (0..self.levels)
            .map(|i| (self.min_res as f64 * g.powi(i as i32)).round() as usize)
            .collect()
    }

    /// Bandwidth β at `step` of a `total`-step run.
    pub fn beta(&self, step: usize, total: usize) -> f64 {
        if let Some(b) = self.frozen_beta {
            return b;
        }
        let l = self.levels as f64;
        let start = self.beta_start.min(l);
        let ramp = self.ramp_fraction * total as f64;
        if ramp <= 0.0 || step as f64 >= ramp {
            l
        } else {
            start + (l - start) * step as f64 / ramp
        }
    }

    pub fn feature_len(&self) -> usize {
        self.levels * self.channels
    }

    pub fn vertex_count(res: usize) -> usize {
        (res + 1).pow(3)
    }
}

/// Indicator `I(level ≤ β)` with 1-based levels.
#[inline]
pub fn level_weight(level0: usize, beta: f64) -> f64 {
    if (level0 + 1) as f64 <= beta {
        1.0
    } else {
        0.0
    }
}

/// The 8 lattice corners around a point at one level, with trilinear
/// weights and their spatial gradients in world units.
#[derive(Debug, Clone, Copy, Default)]
pub struct Corners {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub dw: [Vec3; 8],
}

pub fn corners(res: usize, bounds: &Aabb, p: Vec3) -> Corners {
    let ext = bounds.extent();
    let n = res + 1;
    let mut i0 = [0usize; 3];
    let mut f = [0.0; 3];
    let mut scale = [0.0; 3];
    for a in 0..3 {
        let u = ((p[a] - bounds.min[a]) / ext[a]).clamp(0.0, 1.0);
        let s = u * res as f64;
        let i = (s.floor() as usize).min(res - 1);
        i0[a] = i;
        f[a] = s - i as f64;
        scale[a] = res as f64 / ext[a];
    }
    let mut c = Corners::default();
    for k in 0..8 {
        let (bx, by, bz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
        let wx = if bx == 1 { f[0] } else { 1.0 - f[0] };
        let wy = if by == 1 { f[1] } else { 1.0 - f[1] };
        let wz = if bz == 1 { f[2] } else { 1.0 - f[2] };
        let sx = if bx == 1 { 1.0 } else { -1.0 };
        let sy = if by == 1 { 1.0 } else { -1.0 };
        let sz = if bz == 1 { 1.0 } else { -1.0 };
        c.idx[k] = ((i0[2] + bz) * n + (i0[1] + by)) * n + (i0[0] + bx);
        c.w[k] = wx * wy * wz;
        c.dw[k] = Vec3::new(sx * wy * wz * scale[0], wx * sy * wz * scale[1], wx * wy * sz * scale[2]);
    }
    c
}

/// World position of lattice vertex `(x, y, z)` at resolution `res`.
pub fn vertex_position(res: usize, bounds: &Aabb, x: usize, y: usize, z: usize) -> Vec3 {
    let e = bounds.extent();
    bounds.min
        + Vec3::new(
            e.x * x as f64 / res as f64,
            e.y * y as f64 / res as f64,
            e.z * z as f64 / res as f64,
        )
}
