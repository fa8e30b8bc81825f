//! Software rasterizer producing a G-buffer, and the reverse pass of the
//! perspective-correct UV interpolation chain.

use rayon::prelude::*;

use super::atlas::UvAtlas;
use super::mesh::TriangleMesh;
use crate::dataset::Camera;
use crate::math::{Mat3, Vec3};

pub const EMPTY: u32 = u32::MAX;
/// Interpolated normals can face away from the camera near silhouettes even
/// though the face itself is front-facing; v_cos is clamped to this floor.
pub const MIN_VCOS: f64 = 1e-6;
/// Vertices closer to the camera plane than this cull their face.
pub const NEAR: f64 = 1e-6;
const TILE_ROWS: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: u32,
    pub height: u32,
    pub face: Vec<u32>,
    /// Perspective-correct barycentrics.
    pub bary: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
    /// Interpolated, renormalised vertex normal.
    pub normal: Vec<Vec3>,
    /// Camera z-depth.
    pub depth: Vec<f64>,
    /// Unit direction from the camera centre towards the fragment.
    pub view_dir: Vec<Vec3>,
    pub v_cos: Vec<f64>,
}

impl GBuffer {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        GBuffer {
            width,
            height,
            face: vec![EMPTY; n],
            bary: vec![[0.0; 3]; n],
            uv: vec![[0.0; 2]; n],
            normal: vec![Vec3::ZERO; n],
            depth: vec![0.0; n],
            view_dir: vec![Vec3::ZERO; n],
            v_cos: vec![0.0; n],
        }
    }

    pub fn is_covered(&self, i: usize) -> bool {
        self.face[i] != EMPTY
    }

    pub fn covered(&self) -> Vec<usize> {
        (0..self.face.len()).filter(|&i| self.is_covered(i)).collect()
    }

    pub fn coverage_mask(&self) -> Vec<bool> {
        self.face.iter().map(|&f| f != EMPTY).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Projected {
    face: u32,
    p: [[f64; 2]; 3],
    inv_w: [f64; 3],
    area: f64,
    ymin: u32,
    ymax: u32,
    xmin: u32,
    xmax: u32,
}

fn project_faces(mesh: &TriangleMesh, cam: &Camera) -> Vec<Projected> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    (0..mesh.face_count())
        .into_par_iter()
        .filter_map(|f| {
            let corners = mesh.corners(f);
            let n = (corners[1] - corners[0]).cross(corners[2] - corners[0]);
            if n.dot(corners[0] - cam.position) >= 0.0 {
                return None;
            }
            let mut p = [[0.0; 2]; 3];
            let mut inv_w = [0.0; 3];
            for k in 0..3 {
                let (x, y, z) = cam.project(corners[k])?;
                if z < NEAR {
                    return None;
                }
                p[k] = [x, y];
                inv_w[k] = 1.0 / z;
            }
            let area = edge(p[0], p[1], p[2]);
            if area.abs() < 1e-12 {
                return None;
            }
            let xs = [p[0][0], p[1][0], p[2][0]];
            let ys = [p[0][1], p[1][1], p[2][1]];
            let lo = |v: [f64; 3]| v[0].min(v[1]).min(v[2]);
            let hi = |v: [f64; 3]| v[0].max(v[1]).max(v[2]);
            // Pixel centres sit at i + 0.5.
            let first = |v: f64| (v - 0.5).ceil().max(0.0);
            let last = |v: f64, n: f64| (v - 0.5).floor().min(n - 1.0);
            let (x0, x1) = (first(lo(xs)), last(hi(xs), w));
            let (y0, y1) = (first(lo(ys)), last(hi(ys), h));
            if x0 > x1 || y0 > y1 {
                return None;
            }
            Some(Projected {
                face: f as u32,
                p,
                inv_w,
                area,
                xmin: x0 as u32,
                xmax: x1 as u32,
                ymin: y0 as u32,
                ymax: y1 as u32,
            })
        })
        .collect()
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Rasterize `mesh` from `cam` at the camera's resolution. Back faces are
/// culled; depth ties keep the lower face id.
pub fn rasterize(mesh: &TriangleMesh, atlas: &UvAtlas, cam: &Camera) -> GBuffer {
    let (w, h) = (cam.width, cam.height);
    let faces = project_faces(mesh, cam);
    let tiles = h.div_ceil(TILE_ROWS);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tiles as usize];
    for (i, pf) in faces.iter().enumerate() {
        for t in pf.ymin / TILE_ROWS..=pf.ymax / TILE_ROWS {
            bins[t as usize].push(i);
        }
    }
    // Per tile: winning (face, λ, z) per pixel.
    let tile_hits: Vec<Vec<(u32, [f64; 3], f64)>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let y_start = t as u32 * TILE_ROWS;
            let y_end = (y_start + TILE_ROWS).min(h);
            let mut hits = vec![(EMPTY, [0.0; 3], f64::INFINITY); ((y_end - y_start) * w) as usize];
            for &i in bin {
                let pf = &faces[i];
                for y in pf.ymin.max(y_start)..=pf.ymax.min(y_end - 1) {
                    for x in pf.xmin..=pf.xmax {
                        let q = [x as f64 + 0.5, y as f64 + 0.5];
                        let l = [
                            edge(pf.p[1], pf.p[2], q) / pf.area,
                            edge(pf.p[2], pf.p[0], q) / pf.area,
                            edge(pf.p[0], pf.p[1], q) / pf.area,
                        ];
                        if l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0 {
                            continue;
                        }
                        let s = l[0] * pf.inv_w[0] + l[1] * pf.inv_w[1] + l[2] * pf.inv_w[2];
                        let z = 1.0 / s;
                        let slot = &mut hits[((y - y_start) * w + x) as usize];
                        if z < slot.2 || (z == slot.2 && pf.face < slot.0) {
                            let b = [l[0] * pf.inv_w[0] * z, l[1] * pf.inv_w[1] * z, l[2] * pf.inv_w[2] * z];
                            *slot = (pf.face, b, z);
                        }
                    }
                }
            }
            hits
        })
        .collect();

    let mut g = GBuffer::empty(w, h);
    for (i, (f, b, z)) in tile_hits.into_iter().flatten().enumerate() {
        if f == EMPTY {
            continue;
        }
        let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
        let fi = f as usize;
        let sum = b[0] + b[1] + b[2];
        let b = [b[0] / sum, b[1] / sum, b[2] / sum];
        let [na, nb, nc] = mesh.faces[fi].map(|v| mesh.normals[v as usize]);
        let n = (na * b[0] + nb * b[1] + nc * b[2]).normalized();
        let d = cam.pixel_ray(x, y).dir;
        g.face[i] = f;
        g.bary[i] = b;
        g.uv[i] = atlas.uv_at(fi, b);
        g.normal[i] = n;
        g.depth[i] = z;
        g.view_dir[i] = d;
        g.v_cos[i] = (-d.dot(n)).clamp(MIN_VCOS, 1.0);
    }
    g
}

/// Affine (screen-space) UV interpolation at a covered pixel, for comparison
/// against the perspective-correct result.
pub fn affine_uv(mesh: &TriangleMesh, atlas: &UvAtlas, cam: &Camera, face: usize, x: u32, y: u32) -> Option<[f64; 2]> {
    let corners = mesh.corners(face);
    let mut p = [[0.0; 2]; 3];
    for k in 0..3 {
        let (px, py, _) = cam.project(corners[k])?;
        p[k] = [px, py];
    }
    let q = [x as f64 + 0.5, y as f64 + 0.5];
    let a = edge(p[0], p[1], p[2]);
    let l = [edge(p[1], p[2], q) / a, edge(p[2], p[0], q) / a, edge(p[0], p[1], q) / a];
    Some(atlas.uv_at(face, l))
}

/// `∂(t, b₁, b₂)/∂` of the ray–triangle system, as the inverse of `[−d | e₁ | e₂]`.
fn system_inverse(corners: [Vec3; 3], dir: Vec3) -> Option<Mat3> {
    let e1 = corners[1] - corners[0];
    let e2 = corners[2] - corners[0];
    Mat3::from_columns(-dir, e1, e2).inverse()
}

/// Per-pixel `∂uv/∂V` Jacobian: `out[k][c]` is `∂uv_c/∂(vertex k of the face)`.
pub fn uv_jacobian(mesh: &TriangleMesh, atlas: &UvAtlas, g: &GBuffer, i: usize) -> Option<[[Vec3; 2]; 3]> {
    let f = g.face[i];
    if f == EMPTY {
        return None;
    }
    let fi = f as usize;
    let minv = system_inverse(mesh.corners(fi), g.view_dir[i])?;
    let b = g.bary[i];
    let uvs = atlas.uvs[fi];
    let mut out = [[Vec3::ZERO; 2]; 3];
    for c in 0..2 {
        // Upstream on (t, b₁, b₂) for ∂uv_c with b₀ = 1 − b₁ − b₂.
        let up = Vec3::new(0.0, uvs[1][c] - uvs[0][c], uvs[2][c] - uvs[0][c]);
        let h = minv.transpose().mul_vec(up);
        for k in 0..3 {
            out[k][c] = -h * b[k];
        }
    }
    Some(out)
}

/// Accumulate `∂L/∂V` per vertex from per-pixel `∂L/∂uv`. Uncovered pixels
/// contribute nothing; silhouette (visibility) terms are not modelled.
pub fn raster_backward(mesh: &TriangleMesh, atlas: &UvAtlas, g: &GBuffer, dl_duv: &[[f64; 2]]) -> Vec<Vec3> {
    assert_eq!(dl_duv.len(), g.face.len(), "one upstream gradient per pixel");
    let w = g.width as usize;
    let rows: Vec<usize> = (0..g.height as usize).step_by(TILE_ROWS as usize).collect();
    let partials: Vec<Vec<(u32, Vec3)>> = rows
        .par_iter()
        .map(|&y0| {
            let mut out = Vec::new();
            let y1 = (y0 + TILE_ROWS as usize).min(g.height as usize);
            for i in y0 * w..y1 * w {
                let up = dl_duv[i];
                if up == [0.0, 0.0] {
                    continue;
                }
                let Some(j) = uv_jacobian(mesh, atlas, g, i) else { continue };
                let face = mesh.faces[g.face[i] as usize];
                for k in 0..3 {
                    out.push((face[k], j[k][0] * up[0] + j[k][1] * up[1]));
                }
            }
            out
        })
        .collect();
    let mut grad = vec![Vec3::ZERO; mesh.vertex_count()];
    for (v, d) in partials.into_iter().flatten() {
        grad[v as usize] += d;
    }
    grad
}
