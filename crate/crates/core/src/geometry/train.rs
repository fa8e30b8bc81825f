//! Stage-1 optimisation loop, analytic-SDF fitting, and checkpoints.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{FieldAt, FieldConfig, PointEval, SdfField};
use super::losses::{geometry_losses, GeometryLossWeights, LossTerms, RayTarget};
use super::maskgrid::{MaskGrid, DEFAULT_MASK_RES};
use super::render::{backward_ray, render_ray, RayOutput, RayTrace, RenderSettings};
use super::ScalarField;
use crate::archive::{read_archive, write_archive};
use crate::dataset::{Camera, Dataset, Frame};
use crate::diffmath::{Adam, GradBuffer, StoreHeader};
use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub steps: usize,
    pub batch_rays: usize,
    pub n_samples: usize,
    pub weights: GeometryLossWeights,
    pub field: FieldConfig,
    pub mask_res: usize,
    /// Refresh the mask grid every this many steps.
    pub mask_refresh: usize,
    /// Warm-up refreshes happen at this step and at each doubling of it
    /// below `mask_refresh`, so free space is skipped early in the run.
    pub mask_first_refresh: usize,
    pub mask_tau: f64,
    /// Fraction of the run after which colour head 2 replaces head 1.
    pub head_switch: f64,
    pub use_depth_priors: bool,
    /// Learning rates follow a cosine decay from 1 to this fraction.
    pub lr_final_fraction: f64,
    /// Rays per gradient buffer; buffers merge in chunk order.
    pub chunk_rays: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            steps: 3000,
            batch_rays: 256,
            n_samples: 128,
            weights: GeometryLossWeights::default(),
            field: FieldConfig::default(),
            mask_res: DEFAULT_MASK_RES,
            mask_refresh: 256,
            mask_first_refresh: 32,
            mask_tau: 1.0,
            head_switch: 0.5,
            use_depth_priors: true,
            lr_final_fraction: 0.1,
            chunk_rays: 32,
            seed: 0,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.weights.validate()?;
        if self.steps == 0 || self.batch_rays == 0 || self.chunk_rays == 0 {
            return Err(Error::validation("steps, batch_rays and chunk_rays must be positive"));
        }
        if self.n_samples < super::render::MIN_SAMPLES {
            return Err(Error::validation(format!(
                "n_samples must be at least {}",
                super::render::MIN_SAMPLES
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::validation("lr_final_fraction must lie in [0, 1]"));
        }
        if self.mask_res == 0 || self.mask_refresh == 0 || !(self.mask_tau >= 0.0) {
            return Err(Error::validation("mask grid settings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub beta: f64,
    pub occupancy: f64,
    pub sharpness: f64,
    /// Field evaluations in this batch.
    pub points: usize,
    pub losses: LossTerms,
}

/// Cosine decay from 1 at step 0 to `floor` at `total`.
pub fn lr_schedule(step: usize, total: usize, floor: f64) -> f64 {
    let x = (step as f64 / total.max(1) as f64).min(1.0);
    floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

/// World-space normals estimated from a z-depth map by neighbour differences.
pub fn depth_normals(frame: &Frame) -> Option<Vec<Option<Vec3>>> {
    let depth = frame.depth_prior.as_ref()?;
    let cam = &frame.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let fwd = cam.forward();
    let point = |x: usize, y: usize| -> Option<Vec3> {
        let z = depth[y * w + x];
        if z <= 0.0 {
            return None;
        }
        let r = cam.pixel_ray(x as u32, y as u32);
        Some(r.at(z / r.dir.dot(fwd)))
    };
    let mut out = vec![None; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let (Some(l), Some(r), Some(u), Some(d)) = (point(x - 1, y), point(x + 1, y), point(x, y - 1), point(x, y + 1))
            else {
                continue;
            };
            let mut n = (r - l).cross(d - u);
            let len = n.norm();
            if len < 1e-12 {
                continue;
            }
            n = n / len;
            let dir = cam.pixel_ray(x as u32, y as u32).dir;
            if n.dot(dir) > 0.0 {
                n = -n;
            }
            out[y * w + x] = Some(n);
        }
    }
    Some(out)
}

pub struct GeometryTrainer<'a> {
    dataset: &'a Dataset,
    pub config: GeometryConfig,
    pub field: SdfField,
    pub mask: MaskGrid,
    pub step: usize,
    pub history: Vec<StepLog>,
    prior_normals: Vec<Option<Vec<Option<Vec3>>>>,
    adam: Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeometryHeader {
    kind: String,
    config: GeometryConfig,
    bounds: Aabb,
    step: usize,
    store: StoreHeader,
    history: Vec<StepLog>,
}

const CHECKPOINT_KIND: &str = "geometry";

impl<'a> GeometryTrainer<'a> {
    pub fn new(dataset: &'a Dataset, config: GeometryConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate_for_training()?;
        let field = SdfField::new(config.field.clone(), dataset.scene_bounds, config.seed)?;
        Ok(Self::assemble(dataset, config, field, 0, Vec::new(), None))
    }

    fn assemble(
        dataset: &'a Dataset,
        config: GeometryConfig,
        field: SdfField,
        step: usize,
        history: Vec<StepLog>,
        mask: Option<MaskGrid>,
    ) -> Self {
        let prior_normals = if config.use_depth_priors {
            dataset.frames.par_iter().map(depth_normals).collect()
        } else {
            vec![None; dataset.frames.len()]
        };
        let mask = mask.unwrap_or_else(|| MaskGrid::full(config.mask_res, dataset.scene_bounds));
        GeometryTrainer {
            dataset,
            config,
            field,
            mask,
            step,
            history,
            prior_normals,
            adam: Adam::default(),
        }
    }

    pub fn beta(&self) -> f64 {
        self.config.field.grid.beta(self.step, self.config.steps)
    }

    pub fn head(&self) -> usize {
        if (self.step as f64) < self.config.head_switch * self.config.steps as f64 {
            0
        } else {
            1
        }
    }

    pub fn settings(&self) -> RenderSettings {
        RenderSettings {
            n_samples: self.config.n_samples,
            background: self.dataset.background,
            head: self.head(),
            beta: self.beta(),
        }
    }

    pub fn refresh_due(&self, step: usize) -> bool {
        let (first, every) = (self.config.mask_first_refresh, self.config.mask_refresh);
        if step == 0 {
            return false;
        }
        if step % every == 0 {
            return true;
        }
        step < every && first > 0 && step % first == 0 && (step / first).is_power_of_two()
    }

    pub fn refresh_mask(&mut self) {
        let at = FieldAt {
            field: &self.field,
            beta: self.beta(),
        };
        self.mask.update(&at, self.config.mask_tau);
    }

    fn target(&self, frame: usize, x: u32, y: u32, ray_dir: Vec3) -> RayTarget {
        let f = &self.dataset.frames[frame];
        let i = (y * f.camera.width + x) as usize;
        let mut t = RayTarget {
            rgb: f.image.data[i],
            mask: f.mask.as_ref().map(|m| m[i]),
            depth: None,
            normal: None,
        };
        if self.config.use_depth_priors {
            if let Some(d) = &f.depth_prior {
                if d[i] > 0.0 {
                    t.depth = Some(d[i] / ray_dir.dot(f.camera.forward()));
                }
            }
            if let Some(n) = &self.prior_normals[frame] {
                t.normal = n[i];
            }
        }
        t
    }

    pub fn step_once(&mut self) -> Result<StepLog> {
        if self.refresh_due(self.step) {
            self.refresh_mask();
        }
        let settings = self.settings();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let nf = self.dataset.frames.len();
        let batch: Vec<(usize, u32, u32, f64)> = (0..self.config.batch_rays)
            .map(|_| {
                let f = rng.gen_range(0..nf);
                let cam = &self.dataset.frames[f].camera;
                (f, rng.gen_range(0..cam.width), rng.gen_range(0..cam.height), rng.gen::<f64>())
            })
            .collect();

        let field = &self.field;
        let mask = &self.mask;
        let frames = &self.dataset.frames;
        let mut traces: Vec<RayTrace> = batch
            .par_iter()
            .map(|&(f, x, y, j)| render_ray(field, Some(mask), &frames[f].camera.pixel_ray(x, y), &settings, j))
            .collect();
        let targets: Vec<RayTarget> = batch
            .iter()
            .zip(&traces)
            .map(|(&(f, x, y, _), t)| self.target(f, x, y, t.dir))
            .collect();
        let outputs: Vec<RayOutput> = traces.iter().map(|t| t.output).collect();
        let eik_sum: f64 = traces.iter().map(|t| t.eikonal_sum()).sum();
        let eik_n: usize = traces.iter().map(|t| t.evaluated_points()).sum();
        let (losses, grads, eik_scale) = geometry_losses(&outputs, &targets, eik_sum, eik_n, &self.config.weights);
        if !losses.total.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                message: format!("non-finite loss {losses:?}"),
            });
        }

        let field = &self.field;
        let chunk = self.config.chunk_rays;
        let buffers: Vec<GradBuffer> = traces
            .par_chunks_mut(chunk)
            .zip(grads.par_chunks(chunk))
            .map(|(ts, gs)| {
                let mut buf = GradBuffer::for_store(&field.store);
                for (t, g) in ts.iter_mut().zip(gs) {
                    backward_ray(field, t, &settings, g, eik_scale, &mut buf);
                }
                buf
            })
            .collect();
        drop(traces);
        self.field.store.zero_grads();
        for b in &buffers {
            self.field.store.accumulate(b);
        }
        let adam = Adam {
            lr_scale: lr_schedule(self.step, self.config.steps, self.config.lr_final_fraction),
            ..self.adam
        };
        self.field.store.adam_step(&adam);
        let log = StepLog {
            step: self.step,
            beta: settings.beta,
            occupancy: self.mask.occupancy(),
            sharpness: self.field.sharpness(),
            points: eik_n,
            losses,
        };
        self.history.push(log);
        self.step += 1;
        Ok(log)
    }

    /// Train until `self.step == until` (or the configured total).
    pub fn run(&mut self, until: Option<usize>, mut progress: impl FnMut(&StepLog)) -> Result<()> {
        let end = until.unwrap_or(self.config.steps).min(self.config.steps);
        while self.step < end {
            let log = self.step_once()?;
            progress(&log);
        }
        Ok(())
    }

    /// β at the end of the configured schedule (used for extraction).
    pub fn final_beta(&self) -> f64 {
        self.config.field.grid.beta(self.config.steps, self.config.steps)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let (store_header, mut arrays) = self.field.store.snapshot();
        let mask: Vec<f64> = self.mask.occupied.iter().map(|&o| o as u8 as f64).collect();
        arrays.push(&mask);
        let header = GeometryHeader {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            bounds: self.field.bounds,
            step: self.step,
            store: store_header,
            history: self.history.clone(),
        };
        write_archive(path, &header, &arrays)
    }

    /// Resume training from a checkpoint written by [`save_checkpoint`](Self::save_checkpoint).
    pub fn resume(dataset: &'a Dataset, path: &Path) -> Result<Self> {
        let (header, arrays, mask) = read_geometry_archive(path)?;
        dataset.validate_for_training()?;
        let store = crate::diffmath::ParamStore::restore(&header.store, arrays)?;
        let field = SdfField::from_store(header.config.field.clone(), header.bounds, store)?;
        Ok(Self::assemble(dataset, header.config, field, header.step, header.history, Some(mask)))
    }
}

fn read_geometry_archive(path: &Path) -> Result<(GeometryHeader, Vec<Vec<f64>>, MaskGrid)> {
    let (header, mut arrays): (GeometryHeader, _) = read_archive(path, "geometry checkpoint")?;
    if header.kind != CHECKPOINT_KIND {
        return Err(Error::format("geometry checkpoint", format!("unexpected archive kind {:?}", header.kind)));
    }
    let occ = arrays
        .pop()
        .ok_or_else(|| Error::format("geometry checkpoint", "missing mask grid"))?;
    let res = header.config.mask_res;
    if occ.len() != res * res * res {
        return Err(Error::format("geometry checkpoint", "mask grid has the wrong size"));
    }
    let mask = MaskGrid {
        res,
        bounds: header.bounds,
        occupied: occ.iter().map(|&v| v != 0.0).collect(),
    };
    Ok((header, arrays, mask))
}

/// A trained field loaded for inference, with the β it should be queried at.
pub struct TrainedGeometry {
    pub config: GeometryConfig,
    pub field: SdfField,
    pub mask: MaskGrid,
    pub step: usize,
    pub history: Vec<StepLog>,
}

impl TrainedGeometry {
    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays, mask) = read_geometry_archive(path)?;
        let store = crate::diffmath::ParamStore::restore(&header.store, arrays)?;
        let field = SdfField::from_store(header.config.field.clone(), header.bounds, store)?;
        Ok(TrainedGeometry {
            config: header.config,
            field,
            mask,
            step: header.step,
            history: header.history,
        })
    }

    pub fn beta(&self) -> f64 {
        self.config.field.grid.beta(self.step, self.config.steps)
    }
}

/// Train from scratch for `config.steps` steps.
pub fn train_geometry(dataset: &Dataset, config: GeometryConfig) -> Result<(SdfField, Vec<StepLog>)> {
    let mut t = GeometryTrainer::new(dataset, config)?;
    t.run(None, |_| {})?;
    Ok((t.field, t.history))
}

/// Render colour, z-depth and accumulated weight images for one camera.
pub fn render_field_image(
    field: &SdfField,
    mask: Option<&MaskGrid>,
    camera: &Camera,
    settings: &RenderSettings,
) -> (crate::imaging::Image, Vec<f64>, Vec<f64>) {
    let fwd = camera.forward();
    let w = camera.width;
    let px: Vec<(RayOutput, f64)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray(i as u32 % w, i as u32 / w);
            let t = render_ray(field, mask, &ray, settings, 0.5);
            let o = t.output;
            let z = if o.acc > 1e-6 { o.depth / o.acc * ray.dir.dot(fwd) } else { 0.0 };
            (o, z)
        })
        .collect();
    let mut img = crate::imaging::Image::new(w, camera.height, settings.background);
    let mut depth = vec![0.0; px.len()];
    let mut acc = vec![0.0; px.len()];
    for (i, (o, z)) in px.into_iter().enumerate() {
        img.data[i] = o.rgb.map(|c| c.clamp(0.0, 1.0));
        depth[i] = z;
        acc[i] = o.acc;
    }
    (img, depth, acc)
}

/// Regress the decoder onto an analytic SDF at random points (with an
/// eikonal term), returning the final mean squared error.
pub fn fit_to_analytic(field: &mut SdfField, target: &impl ScalarField, steps: usize, batch: usize, seed: u64) -> Result<f64> {
    let beta = field.config.grid.levels as f64;
    let adam = Adam::default();
    let bounds = field.bounds;
    let mut last = f64::NAN;
    for step in 0..steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pts: Vec<Vec3> = (0..batch)
            .map(|_| {
                let e = bounds.extent();
                bounds.min + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z)
            })
            .collect();
        // Half the batch is pulled onto the target surface by one Newton step.
        let pts: Vec<Vec3> = pts
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                if i % 2 == 0 {
                    return p;
                }
                let g = target.gradient(p);
                let n2 = g.norm_squared();
                if n2 < 1e-12 {
                    return p;
                }
                let q = p - g * (target.value(p) / n2);
                let jitter = Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
                bounds.clamp(q + jitter)
            })
            .collect();
        let f: &SdfField = field;
        let n = pts.len() as f64;
        let chunk = 64;
        let results: Vec<(GradBuffer, f64)> = pts
            .par_chunks(chunk)
            .map(|ps| {
                let mut buf = GradBuffer::for_store(&f.store);
                let mut pe = PointEval::default();
                let mut loss = 0.0;
                let geo = vec![0.0; f.config.geo_features];
                for &p in ps {
                    f.eval(p, beta, true, &mut pe);
                    let r = pe.sdf - target.value(p);
                    let gn = pe.grad.norm();
                    loss += r * r / n;
                    let d_grad = if gn > 1e-12 { pe.grad * (0.2 * (gn - 1.0) / (gn * n)) } else { Vec3::ZERO };
                    f.backward_point(&mut pe, beta, 2.0 * r / n, &geo, d_grad, &mut buf);
                }
                (buf, loss)
            })
            .collect();
        field.store.zero_grads();
        last = 0.0;
        for (b, l) in &results {
            field.store.accumulate(b);
            last += l;
        }
        if !last.is_finite() {
            return Err(Error::Divergence {
                step,
                message: "analytic fit produced a non-finite loss".into(),
            });
        }
        field.store.adam_step(&adam);
    }
    Ok(last)
}
