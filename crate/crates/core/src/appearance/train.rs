//! Stage-2 optimisation: photometric L2 on covered pixels, geometry frozen.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoding::ViewEncoding;
use super::model::{AppearanceModel, FragmentScratch, InitOptions};
use crate::archive::{read_archive, write_archive};
use crate::dataset::Dataset;
use crate::diffmath::{Adam, GradBuffer, MlpSpec, ParamStore, StoreHeader};
use crate::error::{Error, Result};
use crate::geometry::train::lr_schedule;
use crate::geometry::ScalarField;
use crate::math::Vec3;
use crate::raster::{atlas_capacity, rasterize, simplify, unwrap_uv, TriangleMesh, UvAtlas};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppearanceConfig {
    pub steps: usize,
    /// Texture channels K.
    pub channels: usize,
    /// Texture (and atlas) resolution R.
    pub resolution: usize,
    pub alpha: f64,
    pub view_encoding: bool,
    pub hidden: Vec<usize>,
    pub batch_pixels: usize,
    /// Pixels per gradient buffer; buffers merge in chunk order.
    pub chunk_pixels: usize,
    pub lr_texture: f64,
    pub lr_shader: f64,
    pub lr_final_fraction: f64,
    pub init_noise: f64,
    /// Upper bound on faces of the baked mesh (further capped by atlas capacity).
    pub face_budget: usize,
    pub seed: u64,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        AppearanceConfig {
            steps: 5000,
            channels: 12,
            resolution: 256,
            alpha: 0.3,
            view_encoding: true,
            hidden: vec![32, 32],
            batch_pixels: 4096,
            chunk_pixels: 512,
            lr_texture: 1e-2,
            lr_shader: 1e-3,
            lr_final_fraction: 0.1,
            init_noise: 0.1,
            face_budget: 1000,
            seed: 0,
        }
    }
}

impl AppearanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_pixels == 0 || self.chunk_pixels == 0 {
            return Err(Error::validation("steps, batch_pixels and chunk_pixels must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::validation("channels must be at least 1"));
        }
        if self.resolution < 8 {
            return Err(Error::validation("texture resolution must be at least 8"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation("alpha must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::validation("hidden widths must be positive"));
        }
        if !(self.lr_texture >= 0.0 && self.lr_shader >= 0.0) {
            return Err(Error::validation("learning rates must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::validation("lr_final_fraction must lie in [0, 1]"));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::validation("init_noise must be non-negative"));
        }
        if self.face_budget < 2 {
            return Err(Error::validation("face_budget must be at least 2"));
        }
        Ok(())
    }

    pub fn encoding(&self) -> Result<ViewEncoding> {
        if self.view_encoding {
            ViewEncoding::new(self.channels, self.alpha)
        } else {
            let mut e = ViewEncoding::new(self.channels, self.alpha)?;
            e.enabled = false;
            Ok(e)
        }
    }
}

/// Simplify `mesh` to fit a `resolution²` atlas within `face_budget` faces
/// and unwrap it. When `field` is given, vertex normals come from its gradient.
pub fn prepare_bake_mesh(
    mesh: &TriangleMesh,
    field: Option<&dyn ScalarField>,
    face_budget: usize,
    resolution: usize,
) -> Result<(TriangleMesh, UvAtlas)> {
    let target = face_budget.min(atlas_capacity(resolution));
    let mut m = if mesh.face_count() > target {
        simplify(mesh, target)
    } else {
        mesh.clone()
    };
    if let Some(f) = field {
        for (n, &p) in m.normals.iter_mut().zip(&m.positions) {
            let g = f.gradient(p);
            if g.norm() > 1e-12 {
                *n = g.normalized();
            }
        }
    }
    let atlas = unwrap_uv(&m, resolution)?;
    Ok((m, atlas))
}

/// One training fragment: where it samples the texture and its target colour.
#[derive(Debug, Clone, Copy)]
struct Sample {
    uv: [f64; 2],
    v_cos: f64,
    target: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceLog {
    pub step: usize,
    /// Mean over the batch of the squared colour error summed over channels.
    pub loss: f64,
}

impl AppearanceLog {
    /// PSNR implied by the batch loss.
    pub fn psnr(&self) -> f64 {
        -10.0 * (self.loss / 3.0).log10()
    }
}

pub struct AppearanceTrainer<'a> {
    pub config: AppearanceConfig,
    pub mesh: &'a TriangleMesh,
    pub atlas: &'a UvAtlas,
    pub model: AppearanceModel,
    pub step: usize,
    pub history: Vec<AppearanceLog>,
    samples: Vec<Sample>,
    adam: Adam,
}

impl<'a> AppearanceTrainer<'a> {
    pub fn new(dataset: &Dataset, mesh: &'a TriangleMesh, atlas: &'a UvAtlas, config: AppearanceConfig) -> Result<Self> {
        config.validate()?;
        let init = InitOptions {
            seed: config.seed,
            noise: config.init_noise,
            lr_texture: config.lr_texture,
            lr_shader: config.lr_shader,
        };
        let model = AppearanceModel::new(config.resolution, config.encoding()?, &config.hidden, dataset.background, init)?;
        Self::assemble(dataset, mesh, atlas, config, model, 0, Vec::new())
    }

    fn assemble(
        dataset: &Dataset,
        mesh: &'a TriangleMesh,
        atlas: &'a UvAtlas,
        config: AppearanceConfig,
        model: AppearanceModel,
        step: usize,
        history: Vec<AppearanceLog>,
    ) -> Result<Self> {
        dataset.validate()?;
        mesh.validate()?;
        if mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        atlas.validate_for(mesh)?;
        let samples = collect_samples(dataset, mesh, atlas);
        if samples.is_empty() {
            return Err(Error::validation("the mesh covers no (masked) pixel of any training view"));
        }
        Ok(AppearanceTrainer {
            config,
            mesh,
            atlas,
            model,
            step,
            history,
            samples,
            adam: Adam::default(),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn step_once(&mut self) -> Result<AppearanceLog> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = self.samples.len();
        let batch: Vec<usize> = (0..self.config.batch_pixels).map(|_| rng.gen_range(0..n)).collect();
        let inv = 1.0 / batch.len() as f64;
        let model = &self.model;
        let samples = &self.samples;
        let results: Vec<Result<(GradBuffer, f64)>> = batch
            .par_chunks(self.config.chunk_pixels)
            .map(|idx| {
                let mut buf = GradBuffer::for_store(&model.store);
                let mut s = FragmentScratch::default();
                let mut loss = 0.0;
                for &i in idx {
                    let sm = &samples[i];
                    let c = model.shade_fragment(sm.uv, sm.v_cos, &mut s)?;
                    let r = [c[0] - sm.target[0], c[1] - sm.target[1], c[2] - sm.target[2]];
                    loss += (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) * inv;
                    model.backward_fragment(&mut s, sm.v_cos, r.map(|v| 2.0 * v * inv), &mut buf)?;
                }
                Ok((buf, loss))
            })
            .collect();
        self.model.store.zero_grads();
        let mut loss = 0.0;
        for r in results {
            let (b, l) = r?;
            self.model.store.accumulate(&b);
            loss += l;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                message: format!("non-finite photometric loss {loss}"),
            });
        }
        let adam = Adam {
            lr_scale: lr_schedule(self.step, self.config.steps, self.config.lr_final_fraction),
            ..self.adam
        };
        self.model.store.adam_step(&adam);
        let log = AppearanceLog { step: self.step, loss };
        self.history.push(log);
        self.step += 1;
        Ok(log)
    }

    /// Train until `self.step == until` (or the configured total).
    pub fn run(&mut self, until: Option<usize>, mut progress: impl FnMut(&AppearanceLog)) -> Result<()> {
        let end = until.unwrap_or(self.config.steps).min(self.config.steps);
        while self.step < end {
            let log = self.step_once()?;
            progress(&log);
        }
        Ok(())
    }

    /// Mean photometric loss over every training fragment.
    pub fn full_loss(&self) -> Result<f64> {
        let model = &self.model;
        let parts: Vec<Result<f64>> = self
            .samples
            .par_chunks(4096)
            .map(|ch| {
                let mut s = FragmentScratch::default();
                let mut acc = 0.0;
                for sm in ch {
                    let c = model.shade_fragment(sm.uv, sm.v_cos, &mut s)?;
                    acc += (0..3).map(|k| (c[k] - sm.target[k]).powi(2)).sum::<f64>();
                }
                Ok(acc)
            })
            .collect();
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total / self.samples.len() as f64)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        save_baked(path, self.mesh, self.atlas, &self.model, Some((&self.config, self.step, &self.history)))
    }

    /// Continue training from a checkpoint. The mesh and atlas must be the
    /// ones stored in it (see [`BakedModel::load`]).
    pub fn resume(dataset: &Dataset, baked: &'a BakedModel) -> Result<Self> {
        let state = baked
            .training
            .clone()
            .ok_or_else(|| Error::format("appearance checkpoint", "checkpoint carries no training state"))?;
        Self::assemble(dataset, &baked.mesh, &baked.atlas, state.config, baked.model.clone(), state.step, state.history)
    }
}

/// G-buffer fragments of every training view that are covered by the mesh
/// and, when a mask exists, inside it.
fn collect_samples(dataset: &Dataset, mesh: &TriangleMesh, atlas: &UvAtlas) -> Vec<Sample> {
    let per_frame: Vec<Vec<Sample>> = dataset
        .frames
        .par_iter()
        .map(|fr| {
            let g = rasterize(mesh, atlas, &fr.camera);
            (0..g.face.len())
                .filter(|&i| g.is_covered(i) && fr.mask.as_ref().map_or(true, |m| m[i]))
                .map(|i| Sample {
                    uv: g.uv[i],
                    v_cos: g.v_cos[i],
                    target: fr.image.data[i],
                })
                .collect()
        })
        .collect();
    per_frame.into_iter().flatten().collect()
}

/// Train from scratch for `config.steps` steps.
pub fn train_appearance(
    dataset: &Dataset,
    mesh: &TriangleMesh,
    atlas: &UvAtlas,
    config: AppearanceConfig,
) -> Result<(AppearanceModel, Vec<AppearanceLog>)> {
    let mut t = AppearanceTrainer::new(dataset, mesh, atlas, config)?;
    t.run(None, |_| {})?;
    Ok((t.model, t.history))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_KIND: &str = "appearance";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingState {
    pub config: AppearanceConfig,
    pub step: usize,
    pub history: Vec<AppearanceLog>,
}

#[derive(Serialize, Deserialize)]
struct AppearanceHeader {
    kind: String,
    resolution: usize,
    encoding: ViewEncoding,
    shader: MlpSpec,
    background: [f64; 3],
    atlas_resolution: usize,
    atlas_cell: f64,
    store: StoreHeader,
    training: Option<TrainingState>,
}

/// Baked stage-2 result: the frozen mesh, its atlas and the appearance model.
#[derive(Debug, Clone)]
pub struct BakedModel {
    pub mesh: TriangleMesh,
    pub atlas: UvAtlas,
    pub model: AppearanceModel,
    pub training: Option<TrainingState>,
}

pub fn save_baked(
    path: &Path,
    mesh: &TriangleMesh,
    atlas: &UvAtlas,
    model: &AppearanceModel,
    training: Option<(&AppearanceConfig, usize, &Vec<AppearanceLog>)>,
) -> Result<()> {
    let (store, mut arrays) = model.store.snapshot();
    let flat = |v: &[Vec3]| v.iter().flat_map(|p| p.to_array()).collect::<Vec<f64>>();
    let pos = flat(&mesh.positions);
    let nrm = flat(&mesh.normals);
    let faces: Vec<f64> = mesh.faces.iter().flatten().map(|&i| i as f64).collect();
    let uvs: Vec<f64> = atlas.uvs.iter().flatten().flatten().copied().collect();
    arrays.extend([pos.as_slice(), nrm.as_slice(), faces.as_slice(), uvs.as_slice()]);
    let header = AppearanceHeader {
        kind: CHECKPOINT_KIND.into(),
        resolution: model.resolution(),
        encoding: model.encoding.clone(),
        shader: model.shader.spec.clone(),
        background: model.background,
        atlas_resolution: atlas.resolution,
        atlas_cell: atlas.cell,
        store,
        training: training.map(|(c, s, h)| TrainingState {
            config: c.clone(),
            step: s,
            history: h.clone(),
        }),
    };
    write_archive(path, &header, &arrays)
}

impl BakedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let t = self.training.as_ref().map(|t| (&t.config, t.step, &t.history));
        save_baked(path, &self.mesh, &self.atlas, &self.model, t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let comp = "appearance checkpoint";
        let (h, mut arrays): (AppearanceHeader, _) = read_archive(path, comp)?;
        if h.kind != CHECKPOINT_KIND {
            return Err(Error::format(comp, format!("unexpected archive kind {:?}", h.kind)));
        }
        if arrays.len() < 4 {
            return Err(Error::format(comp, "missing mesh arrays"));
        }
        let uvs = arrays.pop().unwrap();
        let faces = arrays.pop().unwrap();
        let nrm = arrays.pop().unwrap();
        let pos = arrays.pop().unwrap();
        if pos.len() % 3 != 0 || nrm.len() != pos.len() || faces.len() % 3 != 0 || uvs.len() != faces.len() * 2 {
            return Err(Error::format(comp, "mesh arrays have inconsistent sizes"));
        }
        let vecs = |a: &[f64]| a.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
        let mesh = TriangleMesh {
            positions: vecs(&pos),
            normals: vecs(&nrm),
            faces: faces.chunks_exact(3).map(|c| [c[0] as u32, c[1] as u32, c[2] as u32]).collect(),
        };
        mesh.validate().map_err(|e| Error::format(comp, e.to_string()))?;
        let atlas = UvAtlas {
            resolution: h.atlas_resolution,
            uvs: uvs.chunks_exact(6).map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]]]).collect(),
            chart: (0..mesh.face_count() as u32).collect(),
            cell: h.atlas_cell,
        };
        atlas.validate_for(&mesh).map_err(|e| Error::format(comp, e.to_string()))?;
        let store = ParamStore::restore(&h.store, arrays)?;
        let model = AppearanceModel::from_store(store, h.resolution, h.encoding, h.shader, h.background)?;
        Ok(BakedModel {
            mesh,
            atlas,
            model,
            training: h.training,
        })
    }
}
