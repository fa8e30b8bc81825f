//! Stage 1: SDF reconstruction on progressive grids and mesh extraction.

pub mod encoding;
pub mod extract;
pub mod field;
pub mod grid;
pub mod losses;
pub mod maskgrid;
pub mod render;
pub mod train;

pub use extract::extract_mesh;
pub use field::{FieldAt, FieldConfig, PointEval, SdfField};
pub use grid::GridSchedule;
pub use losses::{GeometryLossWeights, LossTerms};
pub use maskgrid::MaskGrid;
pub use render::{render_ray, RayOutput, RenderSettings};
pub use train::{fit_to_analytic, train_geometry, GeometryConfig, GeometryTrainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Primitive;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::TriangleMesh;

/// A queryable signed distance (negative inside).
pub trait ScalarField: Sync {
    fn value(&self, p: Vec3) -> f64;

    fn gradient(&self, p: Vec3) -> Vec3 {
        let h = 1e-6;
        let e = |a: usize| {
            let mut v = Vec3::ZERO;
            v[a] = h;
            (self.value(p + v) - self.value(p - v)) / (2.0 * h)
        };
        Vec3::new(e(0), e(1), e(2))
    }
}

impl<F: Fn(Vec3) -> f64 + Sync> ScalarField for F {
    fn value(&self, p: Vec3) -> f64 {
        self(p)
    }
}

impl ScalarField for Primitive {
    fn value(&self, p: Vec3) -> f64 {
        self.sdf(p)
    }

    fn gradient(&self, p: Vec3) -> Vec3 {
        Primitive::gradient(self, p)
    }
}

/// Mean `||∇f| − 1|` over `samples` points near a surface: each one is a
/// random vertex of `mesh` pushed along the field gradient by a uniform offset
/// in `[−band, band]`.
pub fn eikonal_residual(field: &dyn ScalarField, mesh: &TriangleMesh, band: f64, samples: usize, seed: u64) -> Result<f64> {
    if mesh.positions.is_empty() || samples == 0 {
        return Err(Error::validation("eikonal residual needs vertices and a positive sample count"));
    }
    if !(band >= 0.0 && band.is_finite()) {
        return Err(Error::validation("band must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..samples {
        let p = mesh.positions[rng.gen_range(0..mesh.positions.len())];
        let t = if band > 0.0 { rng.gen_range(-band..=band) } else { 0.0 };
        let g = field.gradient(p);
        let n = g.norm();
        let q = if n > 0.0 { p + g * (t / n) } else { p };
        sum += (field.gradient(q).norm() - 1.0).abs();
    }
    Ok(sum / samples as f64)
}
