//! Implicit texture plus neural shader, with the per-pixel forward and
//! reverse passes and deferred rendering from a G-buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::encoding::ViewEncoding;
use crate::dataset::Camera;
use crate::diffmath::{footprint, Activation, Footprint, GradSink, Mlp, MlpSpec, MlpTrace, ParamId, ParamStore, TextureShape};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::raster::{rasterize, GBuffer, TriangleMesh, UvAtlas};

pub const TEXTURE_PARAM: &str = "texture";
pub const SHADER_PARAM: &str = "shader";

/// `K → hidden… → 3`, relu hidden layers, sigmoid output.
pub fn shader_spec(channels: usize, hidden: &[usize]) -> Result<MlpSpec> {
    let mut widths = vec![channels];
    widths.extend_from_slice(hidden);
    widths.push(3);
    MlpSpec::uniform(&widths, Activation::Relu, Activation::Sigmoid)
}

#[derive(Debug, Clone)]
pub struct AppearanceModel {
    pub store: ParamStore,
    pub texture: ParamId,
    pub shape: TextureShape,
    pub encoding: ViewEncoding,
    pub shader: Mlp,
    pub background: [f64; 3],
}

/// Reusable per-thread buffers for one fragment.
#[derive(Debug, Clone, Default)]
pub struct FragmentScratch {
    fp: Option<Footprint>,
    feat: Vec<f64>,
    enc: Vec<f64>,
    d_enc: Vec<f64>,
    d_feat: Vec<f64>,
    trace: MlpTrace,
}

/// Gradients of a fragment's loss with respect to its G-buffer inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentInputGrad {
    pub uv: [f64; 2],
    pub v_cos: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    pub seed: u64,
    /// Texels start uniform in `±noise`.
    pub noise: f64,
    pub lr_texture: f64,
    pub lr_shader: f64,
}

impl AppearanceModel {
    pub fn new(resolution: usize, encoding: ViewEncoding, hidden: &[usize], background: [f64; 3], init: InitOptions) -> Result<Self> {
        encoding.validate()?;
        if resolution == 0 {
            return Err(Error::validation("texture resolution must be positive"));
        }
        let k = encoding.channels();
        let shape = TextureShape {
            resolution,
            channels: k,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let noise = init.noise;
        let texels: Vec<f64> = (0..shape.len())
            .map(|_| if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 })
            .collect();
        let mut store = ParamStore::new();
        let texture = store.register_sparse(TEXTURE_PARAM, texels, init.lr_texture);
        let shader = Mlp::new(shader_spec(k, hidden)?, &mut store, SHADER_PARAM, init.lr_shader, &mut rng)?;
        Ok(AppearanceModel {
            store,
            texture,
            shape,
            encoding,
            shader,
            background,
        })
    }

    /// Assemble from plain arrays (package import): texel-major texture and
    /// per-layer `(weights, biases)`.
    pub fn from_parts(
        resolution: usize,
        texels: Vec<f64>,
        encoding: ViewEncoding,
        spec: MlpSpec,
        layers: Vec<(Vec<f64>, Vec<f64>)>,
        background: [f64; 3],
    ) -> Result<Self> {
        encoding.validate()?;
        spec.validate()?;
        let k = encoding.channels();
        if spec.input_width() != k || spec.output_width() != 3 {
            return Err(Error::validation(format!(
                "shader maps {} → {} but the texture has {k} channels and colour needs 3",
                spec.input_width(),
                spec.output_width()
            )));
        }
        let shape = TextureShape {
            resolution,
            channels: k,
        };
        if texels.len() != shape.len() {
            return Err(Error::validation(format!(
                "texture holds {} values, expected {}",
                texels.len(),
                shape.len()
            )));
        }
        if layers.len() != spec.layers() {
            return Err(Error::validation("shader layer count does not match its spec"));
        }
        let mut store = ParamStore::new();
        let texture = store.register_sparse(TEXTURE_PARAM, texels, 0.0);
        for (l, (w, b)) in layers.into_iter().enumerate() {
            store.register(&format!("{SHADER_PARAM}.w{l}"), w, 0.0);
            store.register(&format!("{SHADER_PARAM}.b{l}"), b, 0.0);
        }
        let shader = Mlp::attach(spec, &store, SHADER_PARAM)?;
        Ok(AppearanceModel {
            store,
            texture,
            shape,
            encoding,
            shader,
            background,
        })
    }

    /// Reattach to a restored parameter store (checkpoints).
    pub fn from_store(
        store: ParamStore,
        resolution: usize,
        encoding: ViewEncoding,
        spec: MlpSpec,
        background: [f64; 3],
    ) -> Result<Self> {
        encoding.validate()?;
        let shape = TextureShape {
            resolution,
            channels: encoding.channels(),
        };
        let texture = store
            .id(TEXTURE_PARAM)
            .ok_or_else(|| Error::format("appearance checkpoint", "missing texture"))?;
        if store.value(texture).len() != shape.len() {
            return Err(Error::format("appearance checkpoint", "texture has the wrong size"));
        }
        if spec.input_width() != shape.channels {
            return Err(Error::format("appearance checkpoint", "shader input width differs from the channel count"));
        }
        let shader = Mlp::attach(spec, &store, SHADER_PARAM)?;
        Ok(AppearanceModel {
            store,
            texture,
            shape,
            encoding,
            shader,
            background,
        })
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn resolution(&self) -> usize {
        self.shape.resolution
    }

    pub fn texels(&self) -> &[f64] {
        self.store.value(self.texture)
    }

    /// Per-layer `(weights, biases)`; weights are row-major `[out][in]`.
    pub fn shader_layers(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.shader
            .weights
            .iter()
            .zip(&self.shader.biases)
            .map(|(&w, &b)| (self.store.value(w).to_vec(), self.store.value(b).to_vec()))
            .collect()
    }

    /// Colour of one fragment. The scratch keeps the trace for [`Self::backward_fragment`].
    pub fn shade_fragment(&self, uv: [f64; 2], v_cos: f64, s: &mut FragmentScratch) -> Result<[f64; 3]> {
        let k = self.channels();
        let fp = footprint(self.shape.resolution, uv[0], uv[1])?;
        s.feat.resize(k, 0.0);
        s.enc.resize(k, 0.0);
        self.shape.sample_into(self.texels(), &fp, &mut s.feat);
        self.encoding.encode_into(&s.feat, v_cos, &mut s.enc);
        self.shader.forward(&self.store, &s.enc, &mut s.trace)?;
        s.fp = Some(fp);
        let o = s.trace.output();
        Ok([o[0], o[1], o[2]])
    }

    /// Reverse pass of the last [`Self::shade_fragment`] call: texel and shader
    /// gradients go to `sink`; gradients for the fragment inputs are returned.
    pub fn backward_fragment(
        &self,
        s: &mut FragmentScratch,
        v_cos: f64,
        dl_drgb: [f64; 3],
        sink: &mut impl GradSink,
    ) -> Result<FragmentInputGrad> {
        let fp = s
            .fp
            .take()
            .ok_or_else(|| Error::Usage("fragment backward without a forward pass".into()))?;
        let k = self.channels();
        s.d_enc.resize(k, 0.0);
        s.d_feat.resize(k, 0.0);
        self.shader
            .backward(&self.store, &mut s.trace, &dl_drgb, sink, Some(&mut s.d_enc))?;
        let dv = self.encoding.backward(&s.feat, v_cos, &s.d_enc, &mut s.d_feat);
        let tex = self.texture;
        self.shape.backward(&fp, &s.d_feat, |i, g| sink.add(tex, i, g));
        let (du, dvv) = self.shape.uv_gradient(self.texels(), &fp);
        let duv = [
            du.iter().zip(&s.d_feat).map(|(a, b)| a * b).sum(),
            dvv.iter().zip(&s.d_feat).map(|(a, b)| a * b).sum(),
        ];
        Ok(FragmentInputGrad { uv: duv, v_cos: dv })
    }

    /// Deferred shading of a G-buffer; uncovered pixels get the background.
    pub fn shade_gbuffer(&self, g: &GBuffer) -> Result<Image> {
        let w = g.width as usize;
        let rows: Vec<Vec<[f64; 3]>> = (0..g.height as usize)
            .into_par_iter()
            .map(|y| -> Result<Vec<[f64; 3]>> {
                let mut s = FragmentScratch::default();
                (y * w..(y + 1) * w)
                    .map(|i| {
                        if g.is_covered(i) {
                            self.shade_fragment(g.uv[i], g.v_cos[i], &mut s)
                        } else {
                            Ok(self.background)
                        }
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Image {
            width: g.width,
            height: g.height,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

/// Rasterize and shade one view at the camera's resolution.
pub fn render_view(mesh: &TriangleMesh, atlas: &UvAtlas, model: &AppearanceModel, camera: &Camera) -> Result<Image> {
    if mesh.is_empty() {
        return Ok(Image::new(camera.width, camera.height, model.background));
    }
    atlas.validate_for(mesh)?;
    model.shade_gbuffer(&rasterize(mesh, atlas, camera))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::GradBuffer;
    use crate::math::Vec3;

    fn init() -> InitOptions {
        InitOptions {
            seed: 7,
            noise: 0.1,
            lr_texture: 1e-2,
            lr_shader: 1e-3,
        }
    }

    fn small_model(k: usize) -> AppearanceModel {
        AppearanceModel::new(4, ViewEncoding::new(k, 0.3).unwrap(), &[8, 8], [1.0; 3], init()).unwrap()
    }

    fn zero_shader(m: &mut AppearanceModel) {
        for id in m.shader.weights.clone().into_iter().chain(m.shader.biases.clone()) {
            m.store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn texels_start_within_noise_band() {
        let m = AppearanceModel::new(16, ViewEncoding::new(12, 0.3).unwrap(), &[32, 32], [1.0; 3], init()).unwrap();
        assert_eq!(m.texels().len(), 16 * 16 * 12);
        assert!(m.texels().iter().all(|v| v.abs() <= 0.1));
        assert_eq!(m.shader.spec.widths, vec![12, 32, 32, 3]);
    }

    #[test]
    fn zero_shader_gives_mid_grey() {
        let mut m = small_model(4);
        zero_shader(&mut m);
        let mut s = FragmentScratch::default();
        assert_eq!(m.shade_fragment([0.3, 0.6], 0.8, &mut s).unwrap(), [0.5; 3]);
    }

    #[test]
    fn outputs_stay_in_open_unit_cube() {
        let mut m = small_model(4);
        let w = m.shader.weights[0];
        m.store.value_mut(w).iter_mut().for_each(|v| *v *= 50.0);
        let mut s = FragmentScratch::default();
        for i in 0..50 {
            let t = i as f64 / 49.0;
            let c = m.shade_fragment([t, 1.0 - t], t, &mut s).unwrap();
            assert!(c.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn fragment_gradients_match_finite_differences() {
        let m = small_model(5);
        let (uv, vc) = ([0.37, 0.58], 0.62);
        let target = [0.2, 0.7, 0.4];
        let loss = |m: &AppearanceModel, uv: [f64; 2], vc: f64| {
            let c = m.shade_fragment(uv, vc, &mut FragmentScratch::default()).unwrap();
            (0..3).map(|i| (c[i] - target[i]).powi(2)).sum::<f64>()
        };
        let mut s = FragmentScratch::default();
        let c = m.shade_fragment(uv, vc, &mut s).unwrap();
        let up = [0, 1, 2].map(|i| 2.0 * (c[i] - target[i]));
        let mut buf = GradBuffer::for_store(&m.store);
        let gi = m.backward_fragment(&mut s, vc, up, &mut buf).unwrap();
        let h = 1e-6;
        let check = |fd: f64, an: f64| assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "{fd} vs {an}");
        check((loss(&m, uv, vc + h) - loss(&m, uv, vc - h)) / (2.0 * h), gi.v_cos);
        check(
            (loss(&m, [uv[0] + h, uv[1]], vc) - loss(&m, [uv[0] - h, uv[1]], vc)) / (2.0 * h),
            gi.uv[0],
        );
        check(
            (loss(&m, [uv[0], uv[1] + h], vc) - loss(&m, [uv[0], uv[1] - h], vc)) / (2.0 * h),
            gi.uv[1],
        );
        for id in (0..m.store.len()).map(ParamId) {
            let n = m.store.value(id).len();
            let g = buf.dense(id, n);
            for i in 0..n {
                let mut a = m.clone();
                a.store.value_mut(id)[i] += h;
                let mut b = m.clone();
                b.store.value_mut(id)[i] -= h;
                check((loss(&a, uv, vc) - loss(&b, uv, vc)) / (2.0 * h), g[i]);
            }
        }
    }

    #[test]
    fn scaling_features_scales_encoding() {
        let e = ViewEncoding::new(6, 0.3).unwrap();
        let f = [0.1, -0.4, 0.25, 0.9, -0.05, 0.3];
        // Powers of two keep the products exact in floating point.
        for c in [4.0, -0.5, 0.0] {
            let scaled: Vec<f64> = f.iter().map(|v| v * c).collect();
            let a = e.encode(&f, 0.7);
            let b = e.encode(&scaled, 0.7);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x * c, *y);
            }
        }
    }

    #[test]
    fn empty_mesh_renders_background() {
        let m = small_model(4);
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 20.0, 16, 12).unwrap();
        let mesh = TriangleMesh::default();
        let atlas = UvAtlas {
            resolution: 4,
            uvs: Vec::new(),
            chart: Vec::new(),
            cell: 4.0,
        };
        let img = render_view(&mesh, &atlas, &m, &cam).unwrap();
        assert!(img.data.iter().all(|&c| c == [1.0; 3]));
    }

    #[test]
    fn constant_chain_paints_the_coverage_mask() {
        let mut m = small_model(4);
        zero_shader(&mut m);
        let tex = m.texture;
        m.store.value_mut(tex).iter_mut().for_each(|v| *v = 0.25);
        let last = *m.shader.biases.last().unwrap();
        m.store.value_mut(last).copy_from_slice(&[1.0, -1.0, 0.0]);
        let mesh = TriangleMesh::icosphere(2, 0.6);
        let atlas = crate::raster::unwrap_uv(&mesh, 128).unwrap();
        let cam = Camera::look_at(Vec3::new(0.3, 0.2, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 40.0, 32, 32).unwrap();
        let g = rasterize(&mesh, &atlas, &cam);
        let img = m.shade_gbuffer(&g).unwrap();
        let lit = [crate::math::sigmoid(1.0), crate::math::sigmoid(-1.0), 0.5];
        for (i, c) in img.data.iter().enumerate() {
            assert_eq!(*c, if g.is_covered(i) { lit } else { [1.0; 3] });
        }
        assert!(g.covered().len() > 50);
    }
}
