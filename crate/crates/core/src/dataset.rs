//! Multi-view datasets: camera model, `transforms.json` ingestion, and
//! analytically ray-traced oracle scenes with exact masks and depths.
//!
//! Cameras follow the NeRF/OpenGL convention: the camera-to-world matrix
//! maps camera space where the camera looks down `-z`, `+y` is up and `+x`
//! is right. Pixel `(x, y)` has its centre at `(x + 0.5, y + 0.5)` with `y`
//! growing downwards.
//!
//! Depth maps store *z-depth* (distance along the optical axis), matching
//! what a depth renderer produces, not the distance along the ray.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{open_image, Image};
use crate::math::{Aabb, Mat3, Ray, Vec3};

/// Maximum allowed `|RᵀR − I|∞` for a camera rotation.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// Focal length in pixels (square pixels).
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Mat3,
    /// Camera centre in world space.
    pub position: Vec3,
}

impl Camera {
    pub fn new(
        focal: f64,
        width: u32,
        height: u32,
        rotation: Mat3,
        position: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            rotation,
            position,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, principal point at the image centre.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.norm() < 1e-8 {
            // `up` is parallel to the view direction; pick any perpendicular.
            let alt = if forward.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
            right = forward.cross(alt);
        }
        let right = right.normalized();
        let true_up = right.cross(forward).normalized();
        let rotation = Mat3::from_columns(right, true_up, -forward);
        Camera::new(focal, width, height, rotation, eye)
    }

    pub fn focal_from_angle(camera_angle_x: f64, width: u32) -> f64 {
        0.5 * width as f64 / (0.5 * camera_angle_x).tan()
    }

    pub fn camera_angle_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.focal).atan()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::validation(format!("focal must be positive, got {}", self.focal)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::validation("camera width and height must be at least 1"));
        }
        let err = self.rotation.orthonormality_error();
        if !(err < ORTHONORMAL_TOLERANCE) {
            return Err(Error::validation(format!(
                "camera rotation is not orthonormal (|RᵀR − I|∞ = {err:e})"
            )));
        }
        if !self.position.is_finite() {
            return Err(Error::validation("camera position is not finite"));
        }
        Ok(())
    }

    /// Row-major 4×4 camera-to-world transform.
    pub fn cam_to_world(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation.0;
        let t = self.position;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_cam_to_world(m: &[[f64; 4]; 4], focal: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("transform_matrix contains non-finite values"));
        }
        let rotation = Mat3([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        let cam = Camera {
            focal,
            cx,
            cy,
            width,
            height,
            rotation,
            position: Vec3::new(m[0][3], m[1][3], m[2][3]),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Viewing direction (camera `-z`) in world space.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2)
    }

    /// World-space ray through a continuous pixel coordinate.
    pub fn ray_through(&self, px: f64, py: f64) -> Ray {
        let d_cam = Vec3::new((px - self.cx) / self.focal, -(py - self.cy) / self.focal, -1.0);
        Ray::new(self.position, self.rotation.mul_vec(d_cam))
    }

    pub fn pixel_ray(&self, x: u32, y: u32) -> Ray {
        self.ray_through(x as f64 + 0.5, y as f64 + 0.5)
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.position)
    }

    /// Project a world point to `(px, py, z_depth)`; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let q = self.to_camera(p);
        let depth = -q.z;
        if depth <= 0.0 {
            return None;
        }
        Some((self.focal * q.x / depth + self.cx, -self.focal * q.y / depth + self.cy, depth))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    pub image: Image,
    pub mask: Option<Vec<bool>>,
    /// Z-depth in world units per pixel; `0` marks an invalid prior.
    pub depth_prior: Option<Vec<f64>>,
    /// Stem used when writing the frame (e.g. `r_007`).
    pub name: String,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let n = self.camera.pixel_count();
        if self.image.width != self.camera.width || self.image.height != self.camera.height {
            return Err(Error::validation(format!(
                "frame {}: image is {}×{} but camera expects {}×{}",
                self.name, self.image.width, self.image.height, self.camera.width, self.camera.height
            )));
        }
        if self.image.data.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!("frame {}: pixel values outside [0,1]", self.name)));
        }
        if let Some(m) = &self.mask {
            if m.len() != n {
                return Err(Error::validation(format!("frame {}: mask size mismatch", self.name)));
            }
        }
        if let Some(d) = &self.depth_prior {
            if d.len() != n {
                return Err(Error::validation(format!("frame {}: depth size mismatch", self.name)));
            }
            if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation(format!("frame {}: invalid depth values", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub scene_bounds: Aabb,
    pub background: [f64; 3],
    /// Present for synthetic scenes; lets evaluation compare against exact geometry.
    pub oracle: Option<SceneSpec>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::validation("dataset has no frames"));
        }
        if !(self.scene_bounds.volume() > 0.0) {
            return Err(Error::validation("scene bounds must have positive volume"));
        }
        self.frames.iter().try_for_each(Frame::validate)
    }

    /// Training entry points need at least two views.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.frames.len() < 2 {
            return Err(Error::validation(format!(
                "training needs at least 2 frames, dataset has {}",
                self.frames.len()
            )));
        }
        Ok(())
    }

    pub fn has_depth_priors(&self) -> bool {
        self.frames.iter().any(|f| f.depth_prior.is_some())
    }

    /// Copy with every depth prior removed (the no-MVS ablation input).
    pub fn without_depth_priors(&self) -> Dataset {
        let mut d = self.clone();
        for f in &mut d.frames {
            f.depth_prior = None;
        }
        d
    }
}

// ---------------------------------------------------------------------------
// Oracle scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Hemispherical shell, opening towards `+z`. `radius` is the mid-surface
    /// radius and the wall spans `radius ± thickness / 2`.
    Bowl { radius: f64, thickness: f64 },
}

impl Primitive {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sphere" => Ok(Primitive::Sphere { radius: 0.6 }),
            "box" => Ok(Primitive::Box { half_extents: [0.45, 0.35, 0.3] }),
            "bowl" => Ok(Primitive::Bowl { radius: 0.6, thickness: 0.16 }),
            other => Err(Error::validation(format!(
                "unknown primitive {other:?} (expected sphere, box or bowl)"
            ))),
        }
    }

    /// Exact signed distance (negative inside).
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { radius } => p.norm() - radius,
            Primitive::Box { half_extents } => {
                let b = Vec3::from_array(half_extents);
                let q = Vec3::new(p.x.abs(), p.y.abs(), p.z.abs()) - b;
                q.max_elem(Vec3::ZERO).norm() + q.x.max(q.y).max(q.z).min(0.0)
            }
            Primitive::Bowl { radius, thickness } => {
                let rq = (p.x * p.x + p.y * p.y).sqrt();
                let d = if p.z > 0.0 {
                    ((rq - radius).powi(2) + p.z * p.z).sqrt()
                } else {
                    ((rq * rq + p.z * p.z).sqrt() - radius).abs()
                };
                d - 0.5 * thickness
            }
        }
    }

    /// Central-difference gradient of the exact SDF.
    pub fn gradient(&self, p: Vec3) -> Vec3 {
        if let Primitive::Sphere { .. } = self {
            return p.normalized();
        }
        let h = 1e-6;
        let dx = self.sdf(p + Vec3::new(h, 0.0, 0.0)) - self.sdf(p - Vec3::new(h, 0.0, 0.0));
        let dy = self.sdf(p + Vec3::new(0.0, h, 0.0)) - self.sdf(p - Vec3::new(0.0, h, 0.0));
        let dz = self.sdf(p + Vec3::new(0.0, 0.0, h)) - self.sdf(p - Vec3::new(0.0, 0.0, h));
        Vec3::new(dx, dy, dz) / (2.0 * h)
    }

    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => radius,
            Primitive::Box { half_extents } => Vec3::from_array(half_extents).norm(),
            Primitive::Bowl { radius, thickness } => radius + 0.5 * thickness,
        }
    }

    /// First intersection distance along a unit-direction ray.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match *self {
            Primitive::Sphere { radius } => {
                let b = ray.origin.dot(ray.dir);
                let c = ray.origin.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = -b - s;
                let t1 = -b + s;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::Box { half_extents } => {
                let b = Vec3::from_array(half_extents);
                Aabb::new(-b, b).intersect(ray.origin, ray.dir).map(|(t0, _)| t0)
            }
            Primitive::Bowl { .. } => self.sphere_trace(ray),
        }
    }

    fn sphere_trace(&self, ray: &Ray) -> Option<f64> {
        let r = self.bounding_radius() + 1e-3;
        let b = ray.origin.dot(ray.dir);
        let c = ray.origin.norm_squared() - r * r;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let mut t = (-b - s).max(0.0);
        let t_far = -b + s;
        for _ in 0..4000 {
            let d = self.sdf(ray.at(t));
            if d < 1e-11 {
                return Some(t);
            }
            t += d;
            if t > t_far {
                return None;
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Solid { color: [f64; 3] },
    /// 3D checkerboard with cubic cells of side `period`.
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
}

impl Albedo {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "checker" => Ok(Albedo::Checker {
                a: [0.85, 0.55, 0.3],
                b: [0.3, 0.5, 0.8],
                period: 0.4,
            }),
            "solid" => Ok(Albedo::Solid { color: [0.75, 0.7, 0.65] }),
            other => Err(Error::validation(format!(
                "unknown albedo pattern {other:?} (expected checker or solid)"
            ))),
        }
    }

    pub fn at(&self, p: Vec3) -> [f64; 3] {
        match *self {
            Albedo::Solid { color } => color,
            Albedo::Checker { a, b, period } => {
                let k = (p.x / period).floor() + (p.y / period).floor() + (p.z / period).floor();
                if (k as i64).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Recipe for an analytic oracle scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub primitive: Primitive,
    pub albedo: Albedo,
    /// Phong lobe strength in `[0, 1]`.
    pub specular: f64,
    pub shininess: f64,
    pub views: usize,
    pub resolution: u32,
    pub camera_distance: f64,
    pub camera_angle_x: f64,
    pub seed: u64,
    pub background: [f64; 3],
    /// Direction towards the (fixed, directional) light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub half_extent: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            primitive: Primitive::Sphere { radius: 0.6 },
            albedo: Albedo::parse("checker").unwrap(),
            specular: 0.0,
            shininess: 24.0,
            views: 50,
            resolution: 64,
            camera_distance: 3.0,
            camera_angle_x: 0.6911112,
            seed: 0,
            background: [1.0, 1.0, 1.0],
            light_dir: [0.3, 0.4, 0.866],
            ambient: 0.3,
            half_extent: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::validation(format!("resolution must be at least 8, got {}", self.resolution)));
        }
        if self.views < 2 {
            return Err(Error::validation(format!("view count must be at least 2, got {}", self.views)));
        }
        if !(0.0..=1.0).contains(&self.specular) {
            return Err(Error::validation("specular lobe strength must lie in [0, 1]"));
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(Error::validation("camera_angle_x must lie in (0, π)"));
        }
        if self.camera_distance <= self.bounds().radius() {
            return Err(Error::validation("cameras must sit outside the scene bounds"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::cube(self.half_extent)
    }

    pub fn focal(&self) -> f64 {
        Camera::focal_from_angle(self.camera_angle_x, self.resolution)
    }

    /// Cameras on a Fibonacci sphere, rotated by a seed-dependent rotation,
    /// all looking at the origin.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let rot = if axis.norm() > 1e-6 {
            Mat3::rotation(axis, rng.gen_range(0.0..std::f64::consts::TAU))
        } else {
            Mat3::IDENTITY
        };
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let n = self.views;
        (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64;
                let dir = rot.mul_vec(Vec3::new(r * phi.cos(), r * phi.sin(), z));
                Camera::look_at(
                    dir * self.camera_distance,
                    Vec3::ZERO,
                    Vec3::new(0.0, 0.0, 1.0),
                    self.focal(),
                    self.resolution,
                    self.resolution,
                )
            })
            .collect()
    }

    /// Shade a surface point seen along `view_dir` (unit, pointing into the scene).
    pub fn shade(&self, p: Vec3, n: Vec3, view_dir: Vec3) -> [f64; 3] {
        let l = Vec3::from_array(self.light_dir).normalized();
        let ndl = n.dot(l).max(0.0);
        let albedo = self.albedo.at(p);
        let diffuse = self.ambient + (1.0 - self.ambient) * ndl;
        let spec = if self.specular > 0.0 && ndl > 0.0 {
            let r = n * (2.0 * n.dot(l)) - l;
            self.specular * r.dot(-view_dir).max(0.0).powf(self.shininess)
        } else {
            0.0
        };
        [
            (albedo[0] * diffuse + spec).clamp(0.0, 1.0),
            (albedo[1] * diffuse + spec).clamp(0.0, 1.0),
            (albedo[2] * diffuse + spec).clamp(0.0, 1.0),
        ]
    }
}

/// Ray-trace one oracle frame: 8-bit-quantized colour, exact mask and z-depth.
pub fn render_oracle_frame(spec: &SceneSpec, camera: &Camera, name: &str) -> Frame {
    let n = camera.pixel_count();
    let mut image = Image::new(camera.width, camera.height, spec.background);
    let mut mask = vec![false; n];
    let mut depth = vec![0.0; n];
    let forward = camera.forward();
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.pixel_ray(x, y);
            if let Some(t) = spec.primitive.intersect(&ray) {
                let p = ray.at(t);
                let mut nrm = spec.primitive.gradient(p).normalized();
                if nrm.dot(ray.dir) > 0.0 {
                    nrm = -nrm;
                }
                let idx = (y * camera.width + x) as usize;
                image.data[idx] = spec.shade(p, nrm, ray.dir);
                mask[idx] = true;
                depth[idx] = t * ray.dir.dot(forward);
            }
        }
    }
    image.quantize_u8();
    Frame {
        camera: camera.clone(),
        image,
        mask: Some(mask),
        depth_prior: Some(depth),
        name: name.to_string(),
    }
}

pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<Dataset> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    let frames = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| render_oracle_frame(spec, cam, &format!("r_{i:03}")))
        .collect();
    Ok(Dataset {
        frames,
        scene_bounds: spec.bounds(),
        background: spec.background,
        oracle: Some(spec.clone()),
    })
}

// ---------------------------------------------------------------------------
// transforms.json I/O
// ---------------------------------------------------------------------------

pub const MANIFEST_NAME: &str = "transforms.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<u32>,
    /// World units per unit of 16-bit depth intensity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene_bounds: Option<Aabb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle: Option<SceneSpec>,
    frames: Vec<ManifestFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

/// Default depth quantisation: 0.1 mm per intensity step.
pub const DEFAULT_DEPTH_SCALE: f64 = 1e-4;

fn resolve_image_path(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_some() && p.exists() {
        p
    } else {
        let mut s = p.into_os_string();
        s.push(".png");
        PathBuf::from(s)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.png"))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let first = &dataset.frames[0].camera;
    let max_depth = dataset
        .frames
        .iter()
        .filter_map(|f| f.depth_prior.as_ref())
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b));
    let depth_scale = if max_depth / DEFAULT_DEPTH_SCALE < 65535.0 {
        DEFAULT_DEPTH_SCALE
    } else {
        max_depth / 65535.0
    };

    let mut frames = Vec::with_capacity(dataset.frames.len());
    for f in &dataset.frames {
        if f.camera.focal != first.focal || f.camera.width != first.width || f.camera.height != first.height {
            return Err(Error::validation("transforms.json requires shared intrinsics across frames"));
        }
        let rel = format!("./images/{}", f.name);
        let img_path = img_dir.join(format!("{}.png", f.name));
        f.image.save_png(&img_path)?;
        if let Some(mask) = &f.mask {
            let buf = image::GrayImage::from_fn(f.camera.width, f.camera.height, |x, y| {
                image::Luma([if mask[(y * f.camera.width + x) as usize] { 255 } else { 0 }])
            });
            let p = sibling(&img_path, "_mask");
            buf.save_with_format(&p, image::ImageFormat::Png).map_err(|e| Error::image(&p, e))?;
        }
        if let Some(depth) = &f.depth_prior {
            let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
                image::ImageBuffer::from_fn(f.camera.width, f.camera.height, |x, y| {
                    let d = depth[(y * f.camera.width + x) as usize];
                    image::Luma([(d / depth_scale).round().clamp(0.0, 65535.0) as u16])
                });
            let p = sibling(&img_path, "_depth");
            buf.save_with_format(&p, image::ImageFormat::Png).map_err(|e| Error::image(&p, e))?;
        }
        frames.push(ManifestFrame {
            file_path: rel,
            transform_matrix: f.camera.cam_to_world(),
        });
    }
    let manifest = Manifest {
        camera_angle_x: first.camera_angle_x(),
        fl_x: Some(first.focal),
        cx: Some(first.cx),
        cy: Some(first.cy),
        w: Some(first.width),
        h: Some(first.height),
        depth_scale: dataset.has_depth_priors().then_some(depth_scale),
        scene_bounds: Some(dataset.scene_bounds),
        background: Some(dataset.background),
        oracle: dataset.oracle.clone(),
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(Error::format(
            MANIFEST_NAME,
            format!("no pose manifest found in {}", dir.display()),
        ));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(MANIFEST_NAME, e.to_string()))?;
    if manifest.frames.is_empty() {
        return Err(Error::validation("manifest lists zero frames"));
    }
    let background = manifest.background.unwrap_or([1.0, 1.0, 1.0]);

    let frames: Vec<Frame> = manifest
        .frames
        .par_iter()
        .map(|mf| load_frame(dir, &manifest, mf, background))
        .collect::<Result<_>>()?;

    let (w0, h0) = (frames[0].camera.width, frames[0].camera.height);
    if frames.iter().any(|f| f.camera.width != w0 || f.camera.height != h0) {
        return Err(Error::validation("frames have differing image sizes"));
    }
    let dataset = Dataset {
        frames,
        scene_bounds: manifest.scene_bounds.unwrap_or_else(|| Aabb::cube(1.0)),
        background,
        oracle: manifest.oracle,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn load_frame(dir: &Path, manifest: &Manifest, mf: &ManifestFrame, background: [f64; 3]) -> Result<Frame> {
    let img_path = resolve_image_path(dir, &mf.file_path);
    let dynimg = open_image(&img_path)?;
    let (width, height) = (dynimg.width(), dynimg.height());
    if let (Some(w), Some(h)) = (manifest.w, manifest.h) {
        if w != width || h != height {
            return Err(Error::validation(format!(
                "{}: image is {width}×{height} but manifest declares {w}×{h}",
                img_path.display()
            )));
        }
    }
    let has_alpha = dynimg.color().has_alpha();
    let rgba = dynimg.to_rgba8();
    let mut image = Image::new(width, height, background);
    let mut alpha_mask = vec![false; (width * height) as usize];
    for (i, px) in rgba.pixels().enumerate() {
        let a = px[3] as f64 / 255.0;
        let c = [px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0];
        image.data[i] = if has_alpha {
            [
                c[0] * a + background[0] * (1.0 - a),
                c[1] * a + background[1] * (1.0 - a),
                c[2] * a + background[2] * (1.0 - a),
            ]
        } else {
            c
        };
        alpha_mask[i] = a > 0.5;
    }

    let mask_path = sibling(&img_path, "_mask");
    let mask = if mask_path.exists() {
        let m = open_image(&mask_path)?.to_luma8();
        if m.width() != width || m.height() != height {
            return Err(Error::validation(format!("{}: mask size mismatch", mask_path.display())));
        }
        Some(m.pixels().map(|p| p[0] >= 128).collect())
    } else if has_alpha {
        Some(alpha_mask)
    } else {
        None
    };

    let depth_path = sibling(&img_path, "_depth");
    let depth_prior = if depth_path.exists() {
        let scale = manifest.depth_scale.ok_or_else(|| {
            Error::format(MANIFEST_NAME, "depth maps present but `depth_scale` is missing")
        })?;
        let d = open_image(&depth_path)?;
        let d = match d {
            image::DynamicImage::ImageLuma16(buf) => buf,
            _ => {
                return Err(Error::format(
                    depth_path.display().to_string(),
                    "depth maps must be 16-bit grayscale PNG",
                ))
            }
        };
        if d.width() != width || d.height() != height {
            return Err(Error::validation(format!("{}: depth size mismatch", depth_path.display())));
        }
        Some(d.pixels().map(|p| p[0] as f64 * scale).collect())
    } else {
        None
    };

    let focal = manifest
        .fl_x
        .unwrap_or_else(|| Camera::focal_from_angle(manifest.camera_angle_x, width));
    let cx = manifest.cx.unwrap_or(width as f64 * 0.5);
    let cy = manifest.cy.unwrap_or(height as f64 * 0.5);
    let camera = Camera::from_cam_to_world(&mf.transform_matrix, focal, cx, cy, width, height)?;
    let name = img_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Frame {
        camera,
        image,
        mask,
        depth_prior,
        name,
    })
}
