//! Per-face UV atlas: faces are paired into square cells, each holding two
//! right triangles separated by gutters.
//!
//! Texel coordinates follow the bilinear sampler: texel `x` covers
//! `u·R ∈ [x, x+1)` and rows grow with `v`.

use serde::{Deserialize, Serialize};

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Gap in texels kept on every side between charts. With bilinear filtering
/// a sample touches texels whose centres lie within one texel per axis, so a
/// Chebyshev gap of two keeps footprints of different charts disjoint.
pub const GUTTER: f64 = 2.0;
/// Smallest usable leg length of a chart, in texels.
pub const MIN_LEG: f64 = 1.0;
/// Meshes with at least this many faces must get charts covering at least
/// `MIN_UTILIZATION` of the atlas.
pub const DENSE_FACES: usize = 100;
pub const MIN_UTILIZATION: f64 = 0.3;
/// Extra clearance so rounding never closes a gutter.
const SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvAtlas {
    pub resolution: usize,
    /// Per face, the UV of each corner in `[0,1]²`.
    pub uvs: Vec<[[f64; 2]; 3]>,
    /// Chart id of each face (one chart per face).
    pub chart: Vec<u32>,
    /// Side of one packing cell in texels. Not necessarily whole.
    pub cell: f64,
}

fn min_cell() -> f64 {
    MIN_LEG + 2.0 * GUTTER + 4.0 * SLACK
}

/// Cells per row and cell pitch for `faces` charts at `resolution`.
fn grid(faces: usize, resolution: usize) -> (usize, f64) {
    let cells = faces.div_ceil(2);
    let mut per_row = (cells as f64).sqrt().ceil() as usize;
    if per_row * per_row < cells {
        per_row += 1;
    }
    let per_row = per_row.max(1);
    (per_row, resolution as f64 / per_row as f64)
}

fn leg(cell: f64) -> f64 {
    cell - 2.0 * GUTTER - 4.0 * SLACK
}

/// Why `faces` charts do not fit, if they don't.
fn misfit(faces: usize, resolution: usize) -> Option<String> {
    let (_, cell) = grid(faces, resolution);
    if cell < min_cell() {
        return Some(format!("cells of {cell:.2} texels are below the {:.0}-texel minimum", min_cell().floor()));
    }
    let util = faces as f64 * 0.5 * leg(cell).powi(2) / (resolution * resolution) as f64;
    if faces >= DENSE_FACES && util < MIN_UTILIZATION {
        return Some(format!("charts would cover only {:.1}% of the atlas", 100.0 * util));
    }
    None
}

/// Largest `n` such that every mesh of up to `n` faces fits a `resolution²` atlas.
pub fn atlas_capacity(resolution: usize) -> usize {
    let bound = 2 * (resolution as f64 / min_cell()).floor().powi(2) as usize;
    (1..=bound).take_while(|&n| misfit(n, resolution).is_none()).last().unwrap_or(0)
}

impl UvAtlas {
    pub fn face_count(&self) -> usize {
        self.uvs.len()
    }

    /// Fraction of the atlas area covered by charts.
    pub fn utilization(&self) -> f64 {
        let area: f64 = self
            .uvs
            .iter()
            .map(|[a, b, c]| 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs())
            .sum();
        area
    }

    pub fn validate_for(&self, mesh: &TriangleMesh) -> Result<()> {
        if self.uvs.len() != mesh.face_count() || self.chart.len() != mesh.face_count() {
            return Err(Error::validation(format!(
                "atlas covers {} faces but the mesh has {}",
                self.uvs.len(),
                mesh.face_count()
            )));
        }
        if self.resolution == 0 {
            return Err(Error::validation("atlas resolution must be positive"));
        }
        if self
            .uvs
            .iter()
            .flatten()
            .any(|uv| !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]))
        {
            return Err(Error::validation("atlas UVs must lie in [0,1]²"));
        }
        Ok(())
    }

    /// Interpolated UV at barycentric coordinates `b` on face `f`.
    #[inline]
    pub fn uv_at(&self, f: usize, b: [f64; 3]) -> [f64; 2] {
        let t = &self.uvs[f];
        [
            b[0] * t[0][0] + b[1] * t[1][0] + b[2] * t[2][0],
            b[0] * t[0][1] + b[1] * t[1][1] + b[2] * t[2][1],
        ]
    }
}

/// Pack every face of `mesh` into a `resolution²` atlas.
pub fn unwrap_uv(mesh: &TriangleMesh, resolution: usize) -> Result<UvAtlas> {
    let faces = mesh.face_count();
    if let Some(why) = misfit(faces, resolution) {
        return Err(Error::Capacity(format!(
            "{faces} faces do not fit a {resolution}² atlas: {why}; it holds at most {} faces",
            atlas_capacity(resolution)
        )));
    }
    let (per_row, c) = grid(faces, resolution);
    let g = GUTTER / 2.0 + SLACK;
    // Lower triangle has its hypotenuse on x + y = c − d, the upper one on
    // x + y = c + d, giving a Chebyshev gap of d between them.
    let d = GUTTER + 2.0 * SLACK;
    let leg = c - 2.0 * g - d;
    let r = resolution as f64;
    let mut uvs = Vec::with_capacity(faces);
    for f in 0..faces {
        let cell_id = f / 2;
        let (cx, cy) = ((cell_id % per_row) as f64 * c, (cell_id / per_row) as f64 * c);
        let tri: [[f64; 2]; 3] = if f % 2 == 0 {
            [[g, g], [g + leg, g], [g, g + leg]]
        } else {
            [[c - g, c - g], [c - g - leg, c - g], [c - g, c - g - leg]]
        };
        uvs.push(tri.map(|[x, y]| [(cx + x) / r, (cy + y) / r]));
    }
    Ok(UvAtlas {
        resolution,
        uvs,
        chart: (0..faces as u32).collect(),
        cell: c,
    })
}

/// Texels the bilinear sampler can touch from any point of face `f`'s chart.
pub fn chart_footprint(atlas: &UvAtlas, f: usize) -> Vec<(usize, usize)> {
    let r = atlas.resolution as f64;
    let [a, b, c] = atlas.uvs[f].map(|uv| [uv[0] * r - 0.5, uv[1] * r - 0.5]);
    let lo = |i: usize| a[i].min(b[i]).min(c[i]);
    let hi = |i: usize| a[i].max(b[i]).max(c[i]);
    let mut out = Vec::new();
    let max = atlas.resolution as i64 - 1;
    let x0 = (lo(0).floor() as i64).clamp(0, max);
    let x1 = ((hi(0).floor() as i64) + 1).clamp(0, max);
    let y0 = (lo(1).floor() as i64).clamp(0, max);
    let y1 = ((hi(1).floor() as i64) + 1).clamp(0, max);
    for y in y0..=y1 {
        for x in x0..=x1 {
            // Texel (x, y) is touched iff the triangle meets the open square
            // of sample positions (x−1, x+1) × (y−1, y+1).
            if triangle_meets_box(&[a, b, c], [x as f64 - 1.0, y as f64 - 1.0], [x as f64 + 1.0, y as f64 + 1.0]) {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}

/// Separating-axis test between a 2-D triangle and an open box.
fn triangle_meets_box(t: &[[f64; 2]; 3], lo: [f64; 2], hi: [f64; 2]) -> bool {
    for i in 0..2 {
        let (mn, mx) = (t[0][i].min(t[1][i]).min(t[2][i]), t[0][i].max(t[1][i]).max(t[2][i]));
        if mx <= lo[i] || mn >= hi[i] {
            return false;
        }
    }
    let corners = [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]];
    for k in 0..3 {
        let (p, q) = (t[k], t[(k + 1) % 3]);
        let n = [q[1] - p[1], p[0] - q[0]];
        let proj = |v: [f64; 2]| n[0] * v[0] + n[1] * v[1];
        let tri: Vec<f64> = t.iter().map(|&v| proj(v)).collect();
        let (tmin, tmax) = tri.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (bmin, bmax) = corners.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(proj(v)), b.max(proj(v))));
        if tmax <= bmin || bmax <= tmin {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn assert_disjoint(atlas: &UvAtlas) {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for f in 0..atlas.face_count() {
            for t in chart_footprint(atlas, f) {
                if let Some(o) = owner.insert(t, f) {
                    panic!("texel {t:?} shared by faces {o} and {f}");
                }
            }
        }
    }

    #[test]
    fn single_triangle_in_unit_square() {
        let m = TriangleMesh::icosphere(0, 1.0);
        let one = TriangleMesh {
            faces: vec![m.faces[0]],
            ..m
        };
        let a = unwrap_uv(&one, 16).unwrap();
        a.validate_for(&one).unwrap();
        assert_eq!(a.face_count(), 1);
    }

    #[test]
    fn two_faces_have_no_texel_overlap() {
        let m = TriangleMesh::icosphere(0, 1.0);
        let two = TriangleMesh {
            faces: m.faces[..2].to_vec(),
            ..m
        };
        let a = unwrap_uv(&two, 8).unwrap();
        assert_disjoint(&a);
    }

    #[test]
    fn icosphere_atlas_is_valid_and_dense_enough() {
        let m = TriangleMesh::icosphere(2, 1.0);
        let a = unwrap_uv(&m, 256).unwrap();
        a.validate_for(&m).unwrap();
        assert_disjoint(&a);
        assert!(a.utilization() >= 0.3, "utilization {}", a.utilization());
    }

    #[test]
    fn capacity_is_exact_and_contiguous() {
        let m = TriangleMesh::icosphere(0, 1.0);
        let with = |n: usize| TriangleMesh {
            faces: (0..n).map(|f| m.faces[f % m.faces.len()]).collect(),
            ..m.clone()
        };
        for res in [32, 128, 256] {
            let cap = atlas_capacity(res);
            assert!(cap >= 1);
            assert!(unwrap_uv(&with(cap), res).is_ok());
            assert!(unwrap_uv(&with(cap + 1), res).is_err());
        }
        // Past the dense threshold the cell pitch must stay near 9 texels.
        assert!(atlas_capacity(256) >= 1000);
        assert!(atlas_capacity(256) < 2 * (256 / 5) * (256 / 5));
    }

    #[test]
    fn capacity_is_enforced() {
        let m = TriangleMesh::icosphere(3, 1.0);
        assert!(matches!(unwrap_uv(&m, 32), Err(Error::Capacity(_))));
        assert!(atlas_capacity(32) < m.face_count());
    }
}
