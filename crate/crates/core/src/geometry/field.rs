//! Signed-distance field: progressive grids + decoder MLP + two appearance heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoding::{positional, positional_len, spherical_harmonics};
use super::grid::{corners, level_weight, GridSchedule};
use super::ScalarField;
use crate::diffmath::{Activation, GradSink, Mlp, MlpSpec, MlpTrace, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

/// Dense grids larger than this are refused instead of exhausting memory.
pub const MAX_GRID_BYTES: usize = 3 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub grid: GridSchedule,
    pub hidden: usize,
    pub geo_features: usize,
    pub head_hidden: usize,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub sh_degree: usize,
    /// Radius of the sphere the decoder starts out representing.
    pub init_radius: f64,
    pub init_variance: f64,
    pub grid_init: f64,
    pub lr_grid: f64,
    pub lr_mlp: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: GridSchedule::desk(),
            hidden: 64,
            geo_features: 15,
            head_hidden: 64,
            pos_freqs: 4,
            dir_freqs: 4,
            sh_degree: 4,
            init_radius: 0.5,
            init_variance: 0.3,
            grid_init: 1e-4,
            lr_grid: 1e-2,
            lr_mlp: 1e-3,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::validation("hidden widths must be at least 1"));
        }
        if !(1..=4).contains(&self.sh_degree) {
            return Err(Error::validation("sh_degree must be in 1..=4"));
        }
        let bytes: usize = self
            .grid
            .resolutions()
            .iter()
            .map(|&r| GridSchedule::vertex_count(r) * self.grid.channels * 8 * 4)
            .sum();
        if bytes > MAX_GRID_BYTES {
            return Err(Error::validation(format!(
                "dense grids need about {} MiB with optimizer state; reduce max_res or levels",
                bytes >> 20
            )));
        }
        Ok(())
    }

    pub fn sdf_input_len(&self) -> usize {
        3 + self.grid.feature_len()
    }

    pub fn head_input_len(&self, head: usize) -> usize {
        let dir = if head == 0 {
            self.sh_degree * self.sh_degree
        } else {
            positional_len(self.dir_freqs)
        };
        self.geo_features + positional_len(self.pos_freqs) + dir
    }
}

#[derive(Debug, Clone)]
pub struct SdfField {
    pub config: FieldConfig,
    pub bounds: Aabb,
    pub store: ParamStore,
    pub grids: Vec<ParamId>,
    pub resolutions: Vec<usize>,
    pub sdf_net: Mlp,
    pub heads: [Mlp; 2],
    /// Sharpness is `exp(10 · variance)`.
    pub variance: ParamId,
}

/// Reusable evaluation state for one sample point.
#[derive(Debug, Clone, Default)]
pub struct PointEval {
    pub pos: Vec3,
    pub sdf: f64,
    pub grad: Vec3,
    input: Vec<f64>,
    /// `∂sdf/∂input` of the decoder.
    a: Vec<f64>,
    trace: MlpTrace,
    dx: Vec<f64>,
    upstream: Vec<f64>,
    g_input: Vec<f64>,
}

impl PointEval {
    pub fn geo_feature(&self) -> &[f64] {
        &self.trace.output()[1..]
    }
}

fn sdf_spec(c: &FieldConfig) -> Result<MlpSpec> {
    MlpSpec::new(
        vec![c.sdf_input_len(), c.hidden, 1 + c.geo_features],
        vec![Activation::Relu, Activation::None],
    )
}

fn head_specs(c: &FieldConfig) -> Result<[MlpSpec; 2]> {
    Ok([
        MlpSpec::new(
            vec![c.head_input_len(0), c.head_hidden, 3],
            vec![Activation::Relu, Activation::Sigmoid],
        )?,
        MlpSpec::new(
            vec![c.head_input_len(1), c.head_hidden, c.head_hidden, 3],
            vec![Activation::Relu, Activation::Relu, Activation::Sigmoid],
        )?,
    ])
}

impl SdfField {
    pub fn new(config: FieldConfig, bounds: Aabb, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(bounds.volume() > 0.0) {
            return Err(Error::validation("field bounds must have positive volume"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let resolutions = config.grid.resolutions();
        let c = config.grid.channels;
        let grids = resolutions
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let n = GridSchedule::vertex_count(r) * c;
                let s = config.grid_init;
                let vals = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
                store.register_sparse(&format!("grid.{i}"), vals, config.lr_grid)
            })
            .collect();

        let sdf_net = Mlp::new(sdf_spec(&config)?, &mut store, "sdf", config.lr_mlp, &mut rng)?;
        geometric_init(&sdf_net, &mut store, &config, &mut rng);
        let [h0, h1] = head_specs(&config)?;
        let heads = [
            Mlp::new(h0, &mut store, "head0", config.lr_mlp, &mut rng)?,
            Mlp::new(h1, &mut store, "head1", config.lr_mlp, &mut rng)?,
        ];
        let variance = store.register("variance", vec![config.init_variance], config.lr_mlp);
        Ok(SdfField {
            config,
            bounds,
            store,
            grids,
            resolutions,
            sdf_net,
            heads,
            variance,
        })
    }

    /// Rebuild handles over a restored parameter store.
    pub fn from_store(config: FieldConfig, bounds: Aabb, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let resolutions = config.grid.resolutions();
        let grids = resolutions
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let name = format!("grid.{i}");
                let id = store
                    .id(&name)
                    .ok_or_else(|| Error::format("geometry checkpoint", format!("missing {name}")))?;
                if store.value(id).len() != GridSchedule::vertex_count(r) * config.grid.channels {
                    return Err(Error::format("geometry checkpoint", format!("{name} has the wrong size")));
                }
                Ok(id)
            })
            .collect::<Result<Vec<_>>>()?;
        let sdf_net = Mlp::attach(sdf_spec(&config)?, &store, "sdf")?;
        let [h0, h1] = head_specs(&config)?;
        let heads = [Mlp::attach(h0, &store, "head0")?, Mlp::attach(h1, &store, "head1")?];
        let variance = store
            .id("variance")
            .ok_or_else(|| Error::format("geometry checkpoint", "missing variance"))?;
        Ok(SdfField {
            config,
            bounds,
            store,
            grids,
            resolutions,
            sdf_net,
            heads,
            variance,
        })
    }

    pub fn sharpness(&self) -> f64 {
        (10.0 * self.store.value(self.variance)[0]).exp()
    }

    /// Concatenated per-level trilinear features, levels above β zeroed.
    pub fn grid_encode(&self, p: Vec3, beta: f64, out: &mut Vec<f64>) {
        let ch = self.config.grid.channels;
        for (lvl, &res) in self.resolutions.iter().enumerate() {
            let start = out.len();
            out.resize(start + ch, 0.0);
            if level_weight(lvl, beta) == 0.0 {
                continue;
            }
            let grid = self.store.value(self.grids[lvl]);
            let cs = corners(res, &self.bounds, p);
            for k in 0..8 {
                let base = cs.idx[k] * ch;
                let w = cs.w[k];
                for c in 0..ch {
                    out[start + c] += w * grid[base + c];
                }
            }
        }
    }

    /// Decoder forward at `p`; with `with_grad`, also `∇sdf` (analytic).
    pub fn eval(&self, p: Vec3, beta: f64, with_grad: bool, pe: &mut PointEval) {
        pe.pos = p;
        pe.input.clear();
        pe.input.extend_from_slice(&p.to_array());
        self.grid_encode(p, beta, &mut pe.input);
        self.sdf_net
            .forward(&self.store, &pe.input, &mut pe.trace)
            .expect("decoder input has the configured width");
        pe.sdf = pe.trace.output()[0];
        if !with_grad {
            return;
        }
        pe.a.resize(pe.input.len(), 0.0);
        self.sdf_net
            .input_gradient(&self.store, &pe.trace, 0, &mut pe.a)
            .expect("decoder is relu with linear output");
        let mut g = Vec3::new(pe.a[0], pe.a[1], pe.a[2]);
        let ch = self.config.grid.channels;
        for (lvl, &res) in self.resolutions.iter().enumerate() {
            if level_weight(lvl, beta) == 0.0 {
                continue;
            }
            let grid = self.store.value(self.grids[lvl]);
            let cs = corners(res, &self.bounds, p);
            let off = 3 + lvl * ch;
            for k in 0..8 {
                let base = cs.idx[k] * ch;
                let mut s = 0.0;
                for c in 0..ch {
                    s += pe.a[off + c] * grid[base + c];
                }
                g += cs.dw[k] * s;
            }
        }
        pe.grad = g;
    }

    pub fn sdf(&self, p: Vec3, beta: f64) -> f64 {
        let mut pe = PointEval::default();
        self.eval(p, beta, false, &mut pe);
        pe.sdf
    }

    pub fn sdf_and_gradient(&self, p: Vec3, beta: f64) -> (f64, Vec3) {
        let mut pe = PointEval::default();
        self.eval(p, beta, true, &mut pe);
        (pe.sdf, pe.grad)
    }

    pub fn head_input(&self, head: usize, geo: &[f64], pos: Vec3, dir: Vec3, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(geo);
        positional(pos, self.config.pos_freqs, out);
        if head == 0 {
            spherical_harmonics(dir, self.config.sh_degree, out);
        } else {
            positional(dir, self.config.dir_freqs, out);
        }
    }

    /// Colour head `head ∈ {0, 1}` on an already-evaluated point.
    pub fn head_forward(&self, head: usize, pe: &PointEval, dir: Vec3, input: &mut Vec<f64>, trace: &mut MlpTrace) -> [f64; 3] {
        self.head_input(head, pe.geo_feature(), pe.pos, dir, input);
        self.heads[head]
            .forward(&self.store, input, trace)
            .expect("head input has the configured width");
        let o = trace.output();
        [o[0], o[1], o[2]]
    }

    /// Convenience colour query.
    pub fn appearance(&self, pos: Vec3, dir: Vec3, head: usize, beta: f64) -> Result<[f64; 3]> {
        if head > 1 {
            return Err(Error::validation(format!("head index must be 0 or 1, got {head}")));
        }
        let mut pe = PointEval::default();
        self.eval(pos, beta, false, &mut pe);
        let mut input = Vec::new();
        let mut trace = MlpTrace::new();
        Ok(self.head_forward(head, &pe, dir, &mut input, &mut trace))
    }

    /// Backward for one colour head; returns `∂L/∂geo` in `d_geo`.
    pub fn head_backward(
        &self,
        head: usize,
        trace: &mut MlpTrace,
        d_rgb: [f64; 3],
        d_geo: &mut [f64],
        sink: &mut impl GradSink,
    ) {
        let n = self.heads[head].spec.input_width();
        let mut dx = vec![0.0; n];
        self.heads[head]
            .backward(&self.store, trace, &d_rgb, sink, Some(&mut dx))
            .expect("head trace is valid");
        for (d, v) in d_geo.iter_mut().zip(&dx) {
            *d += v;
        }
    }

    /// Reverse pass for one point given `∂L/∂sdf`, `∂L/∂geo` and `∂L/∂(∇sdf)`.
    /// The point must have been evaluated with gradients if `d_grad ≠ 0`.
    pub fn backward_point(
        &self,
        pe: &mut PointEval,
        beta: f64,
        d_sdf: f64,
        d_geo: &[f64],
        d_grad: Vec3,
        sink: &mut impl GradSink,
    ) {
        let n_in = pe.input.len();
        let ch = self.config.grid.channels;
        let first_order = d_sdf != 0.0 || d_geo.iter().any(|&g| g != 0.0);
        let second_order = d_grad != Vec3::ZERO;
        pe.dx.clear();
        pe.dx.resize(n_in, 0.0);
        if first_order {
            pe.upstream.clear();
            pe.upstream.push(d_sdf);
            pe.upstream.extend_from_slice(d_geo);
            self.sdf_net
                .backward(&self.store, &mut pe.trace, &pe.upstream, sink, Some(&mut pe.dx))
                .expect("decoder trace is valid");
        }
        if second_order {
            pe.g_input.clear();
            pe.g_input.resize(n_in, 0.0);
            pe.g_input[0] = d_grad.x;
            pe.g_input[1] = d_grad.y;
            pe.g_input[2] = d_grad.z;
        }
        for (lvl, &res) in self.resolutions.iter().enumerate() {
            if level_weight(lvl, beta) == 0.0 {
                continue;
            }
            let gid = self.grids[lvl];
            let grid = self.store.value(gid);
            let cs = corners(res, &self.bounds, pe.pos);
            let off = 3 + lvl * ch;
            for k in 0..8 {
                let base = cs.idx[k] * ch;
                let dwg = if second_order { cs.dw[k].dot(d_grad) } else { 0.0 };
                for c in 0..ch {
                    let mut g = pe.dx[off + c] * cs.w[k];
                    if second_order {
                        g += pe.a[off + c] * dwg;
                        pe.g_input[off + c] += grid[base + c] * dwg;
                    }
                    if g != 0.0 {
                        sink.add(gid, base + c, g);
                    }
                }
            }
        }
        if second_order {
            self.sdf_net
                .input_gradient_backward(&self.store, &pe.trace, 0, &pe.g_input, sink)
                .expect("decoder is relu with linear output");
        }
    }
}

/// Decoder init that starts as an approximate sphere SDF of `init_radius`.
fn geometric_init(net: &Mlp, store: &mut ParamStore, c: &FieldConfig, rng: &mut impl Rng) {
    let n_in = c.sdf_input_len();
    let h = c.hidden;
    let w0 = Normal::new(0.0, 2f64.sqrt() / (h as f64).sqrt()).unwrap();
    let grid_cols = 1e-3;
    {
        let w = store.value_mut(net.weights[0]);
        for j in 0..h {
            for k in 0..n_in {
                w[j * n_in + k] = if k < 3 {
                    w0.sample(rng)
                } else {
                    rng.gen_range(-grid_cols..=grid_cols)
                };
            }
        }
    }
    store.value_mut(net.biases[0]).iter_mut().for_each(|b| *b = 0.0);
    let mean = std::f64::consts::PI.sqrt() / (h as f64).sqrt();
    let w1 = Normal::new(mean, 1e-4).unwrap();
    let w = store.value_mut(net.weights[1]);
    for j in 0..h {
        w[j] = w1.sample(rng);
    }
    store.value_mut(net.biases[1])[0] = -c.init_radius;
}

/// An [`SdfField`] frozen at a given β, usable wherever a scalar field is expected.
pub struct FieldAt<'a> {
    pub field: &'a SdfField,
    pub beta: f64,
}

impl ScalarField for FieldAt<'_> {
    fn value(&self, p: Vec3) -> f64 {
        self.field.sdf(p, self.beta)
    }

    fn gradient(&self, p: Vec3) -> Vec3 {
        self.field.sdf_and_gradient(p, self.beta).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::GradBuffer;

    pub(crate) fn tiny_config() -> FieldConfig {
        FieldConfig {
            grid: GridSchedule {
                levels: 3,
                min_res: 4,
                max_res: 8,
                channels: 2,
                ..GridSchedule::desk()
            },
            hidden: 8,
            geo_features: 3,
            head_hidden: 8,
            grid_init: 0.3,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn geometric_init_is_roughly_a_sphere() {
        let f = SdfField::new(FieldConfig::default(), Aabb::cube(1.0), 0).unwrap();
        let beta = 8.0;
        assert!(f.sdf(Vec3::ZERO, beta) < -0.3);
        assert!(f.sdf(Vec3::new(0.0, 0.0, 0.95), beta) > 0.2);
    }

    #[test]
    fn inactive_levels_are_exact_zeros() {
        let f = SdfField::new(tiny_config(), Aabb::cube(1.0), 1).unwrap();
        let mut out = Vec::new();
        f.grid_encode(Vec3::new(0.1, 0.2, -0.3), 1.5, &mut out);
        assert!(out[..2].iter().any(|&v| v != 0.0));
        assert!(out[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let f = SdfField::new(tiny_config(), Aabb::cube(1.0), 2).unwrap();
        let p = Vec3::new(0.31, -0.12, 0.47);
        let (_, g) = f.sdf_and_gradient(p, 3.0);
        for a in 0..3 {
            let mut e = Vec3::ZERO;
            e[a] = 1e-6;
            let fd = (f.sdf(p + e, 3.0) - f.sdf(p - e, 3.0)) / 2e-6;
            assert!((fd - g[a]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[a]);
        }
    }

    /// L = α·sdf + βᵀgeo + γᵀ∇sdf checked against finite differences on every parameter.
    #[test]
    fn point_backward_matches_finite_differences() {
        let mut f = SdfField::new(tiny_config(), Aabb::cube(1.0), 3).unwrap();
        let p = Vec3::new(-0.27, 0.33, 0.05);
        let beta = 3.0;
        let (ds, dg, dn) = (0.7, [0.3, -0.5, 0.2], Vec3::new(0.4, -0.9, 0.6));
        let objective = |f: &SdfField| {
            let mut pe = PointEval::default();
            f.eval(p, beta, true, &mut pe);
            let geo: f64 = pe.geo_feature().iter().zip(&dg).map(|(a, b)| a * b).sum();
            ds * pe.sdf + geo + pe.grad.dot(dn)
        };
        let mut pe = PointEval::default();
        f.eval(p, beta, true, &mut pe);
        let mut buf = GradBuffer::for_store(&f.store);
        f.backward_point(&mut pe, beta, ds, &dg, dn, &mut buf);
        let ids: Vec<ParamId> = f
            .grids
            .iter()
            .chain(&f.sdf_net.weights)
            .chain(&f.sdf_net.biases)
            .copied()
            .collect();
        for id in ids {
            let n = f.store.value(id).len();
            let analytic = buf.dense(id, n);
            for i in 0..n {
                let orig = f.store.value(id)[i];
                f.store.value_mut(id)[i] = orig + 1e-5;
                let fp = objective(&f);
                f.store.value_mut(id)[i] = orig - 1e-5;
                let fm = objective(&f);
                f.store.value_mut(id)[i] = orig;
                let fd = (fp - fm) / 2e-5;
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3);
                assert!(err < 1e-4, "param {:?}[{i}]: fd {fd} vs {}", id, analytic[i]);
            }
        }
    }
}
