//! SDF volume rendering along rays: logistic-CDF opacity, front-to-back
//! compositing, free-space skipping, and the matching reverse pass.

use super::field::{PointEval, SdfField};
use super::maskgrid::MaskGrid;
use crate::diffmath::{GradSink, MlpTrace};
use crate::math::{Ray, Vec3};

pub const MIN_SAMPLES: usize = 8;
/// Compositing stops once transmittance drops below this.
pub const EARLY_STOP: f64 = 1e-4;
const ALPHA_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub n_samples: usize,
    pub background: [f64; 3],
    /// Which colour head shades samples.
    pub head: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    /// Expected termination distance along the ray (not normalised by `acc`).
    pub depth: f64,
    /// Weighted sum of unit normals.
    pub normal: Vec3,
    pub acc: f64,
}

/// Upstream gradients for one ray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayGrad {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub normal: Vec3,
    pub acc: f64,
}

#[derive(Debug, Clone)]
struct Interval {
    a: usize,
    b: usize,
    t_mid: f64,
    alpha: f64,
    /// `Φ(f_b)/Φ(f_a)`.
    ratio: f64,
    clamped: bool,
    trans: f64,
    w: f64,
}

#[derive(Debug, Clone)]
struct Sample {
    pe: PointEval,
    head_trace: MlpTrace,
    color: [f64; 3],
    normal: Vec3,
}

/// Everything the reverse pass needs from one forward ray.
#[derive(Debug, Clone, Default)]
pub struct RayTrace {
    pub output: RayOutput,
    pub dir: Vec3,
    samples: Vec<Sample>,
    intervals: Vec<Interval>,
    sharpness: f64,
}

impl RayTrace {
    pub fn evaluated_points(&self) -> usize {
        self.samples.len()
    }

    /// `Σ (|∇sdf| − 1)²` over evaluated points.
    pub fn eikonal_sum(&self) -> f64 {
        self.samples.iter().map(|s| (s.pe.grad.norm() - 1.0).powi(2)).sum()
    }

    pub fn eikonal_abs_sum(&self) -> f64 {
        self.samples.iter().map(|s| (s.pe.grad.norm() - 1.0).abs()).sum()
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Forward pass. `jitter ∈ [0,1)` shifts every sample within its stratum.
/// With `mask = None` no space is skipped.
pub fn render_ray(
    field: &SdfField,
    mask: Option<&MaskGrid>,
    ray: &Ray,
    settings: &RenderSettings,
    jitter: f64,
) -> RayTrace {
    let mut trace = RayTrace {
        dir: ray.dir,
        sharpness: field.sharpness(),
        ..Default::default()
    };
    let bg = settings.background;
    trace.output.rgb = bg;
    let Some((t0, t1)) = field.bounds.intersect(ray.origin, ray.dir) else {
        return trace;
    };
    let n = settings.n_samples.max(MIN_SAMPLES);
    let dt = (t1 - t0) / n as f64;
    let ts: Vec<f64> = (0..n).map(|i| t0 + (i as f64 + jitter) * dt).collect();
    let occ: Vec<bool> = match mask {
        Some(m) => ts.iter().map(|&t| m.is_occupied(ray.at(t))).collect(),
        None => vec![true; n],
    };
    let s = trace.sharpness;
    let mut slot = vec![usize::MAX; n];
    let mut head_input = Vec::new();
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut normal = Vec3::ZERO;
    let mut acc = 0.0;

    let mut ensure = |i: usize, trace: &mut RayTrace| -> usize {
        if slot[i] == usize::MAX {
            let mut pe = PointEval::default();
            field.eval(ray.at(ts[i]), settings.beta, true, &mut pe);
            let mut head_trace = MlpTrace::new();
            let color = field.head_forward(settings.head, &pe, ray.dir, &mut head_input, &mut head_trace);
            let gn = pe.grad.norm();
            let normal = if gn > 1e-12 { pe.grad / gn } else { Vec3::ZERO };
            trace.samples.push(Sample {
                pe,
                head_trace,
                color,
                normal,
            });
            slot[i] = trace.samples.len() - 1;
        }
        slot[i]
    };

    for k in 0..n - 1 {
        if !(occ[k] || occ[k + 1]) {
            continue;
        }
        let a = ensure(k, &mut trace);
        let b = ensure(k + 1, &mut trace);
        let (fa, fb) = (trace.samples[a].pe.sdf, trace.samples[b].pe.sdf);
        let ratio = (log_sigmoid(s * fb) - log_sigmoid(s * fa)).exp();
        let raw = 1.0 - ratio;
        let clamped = !(0.0..=ALPHA_MAX).contains(&raw);
        let alpha = raw.clamp(0.0, ALPHA_MAX);
        let w = trans * alpha;
        let t_mid = 0.5 * (ts[k] + ts[k + 1]);
        let (sa, sb) = (&trace.samples[a], &trace.samples[b]);
        for c in 0..3 {
            rgb[c] += w * 0.5 * (sa.color[c] + sb.color[c]);
        }
        normal += (sa.normal + sb.normal) * (0.5 * w);
        depth += w * t_mid;
        acc += w;
        trace.intervals.push(Interval {
            a,
            b,
            t_mid,
            alpha,
            ratio,
            clamped,
            trans,
            w,
        });
        trans *= 1.0 - alpha;
        if trans < EARLY_STOP {
            break;
        }
    }
    for c in 0..3 {
        rgb[c] += (1.0 - acc) * bg[c];
    }
    trace.output = RayOutput { rgb, depth, normal, acc };
    trace
}

/// Reverse pass. `eik_scale` multiplies `∂/∂∇sdf` of `(|∇sdf| − 1)²` at every
/// evaluated point (the eikonal weight divided by the batch point count).
pub fn backward_ray(
    field: &SdfField,
    trace: &mut RayTrace,
    settings: &RenderSettings,
    grad: &RayGrad,
    eik_scale: f64,
    sink: &mut impl GradSink,
) {
    let bg = settings.background;
    let m = trace.intervals.len();
    let ns = trace.samples.len();
    let mut d_sdf = vec![0.0; ns];
    let mut d_color = vec![[0.0; 3]; ns];
    let mut d_normal = vec![Vec3::ZERO; ns];
    let mut d_s = 0.0;

    // ∂L/∂w_k for every interval.
    let gw: Vec<f64> = trace
        .intervals
        .iter()
        .map(|iv| {
            let (sa, sb) = (&trace.samples[iv.a], &trace.samples[iv.b]);
            let mut g = grad.depth * iv.t_mid + grad.acc;
            for c in 0..3 {
                g += grad.rgb[c] * (0.5 * (sa.color[c] + sb.color[c]) - bg[c]);
            }
            g + grad.normal.dot((sa.normal + sb.normal) * 0.5)
        })
        .collect();

    let s = trace.sharpness;
    let mut suffix = 0.0; // Σ_{i>k} gw_i w_i
    for k in (0..m).rev() {
        let iv = trace.intervals[k].clone();
        for c in 0..3 {
            let v = 0.5 * iv.w * grad.rgb[c];
            d_color[iv.a][c] += v;
            d_color[iv.b][c] += v;
        }
        d_normal[iv.a] += grad.normal * (0.5 * iv.w);
        d_normal[iv.b] += grad.normal * (0.5 * iv.w);
        let g_alpha = gw[k] * iv.trans - suffix / (1.0 - iv.alpha);
        suffix += gw[k] * iv.w;
        if iv.clamped || g_alpha == 0.0 {
            continue;
        }
        // α = 1 − r, r = σ(s f_b)/σ(s f_a).
        let (fa, fb) = (trace.samples[iv.a].pe.sdf, trace.samples[iv.b].pe.sdf);
        let (pa, pb) = (crate::math::sigmoid(s * fa), crate::math::sigmoid(s * fb));
        let g_r = -g_alpha;
        d_sdf[iv.b] += g_r * iv.ratio * s * (1.0 - pb);
        d_sdf[iv.a] -= g_r * iv.ratio * s * (1.0 - pa);
        d_s += g_r * iv.ratio * (fb * (1.0 - pb) - fa * (1.0 - pa));
    }
    if d_s != 0.0 {
        sink.add(field.variance, 0, d_s * 10.0 * s);
    }

    let geo_n = field.config.geo_features;
    let mut d_geo = vec![0.0; geo_n];
    for (i, smp) in trace.samples.iter_mut().enumerate() {
        d_geo.iter_mut().for_each(|g| *g = 0.0);
        if d_color[i] != [0.0; 3] {
            field.head_backward(settings.head, &mut smp.head_trace, d_color[i], &mut d_geo, sink);
        }
        let g = smp.pe.grad;
        let gn = g.norm();
        let mut d_grad = Vec3::ZERO;
        if gn > 1e-12 {
            let n = smp.normal;
            let dn = d_normal[i];
            if dn != Vec3::ZERO {
                d_grad += (dn - n * n.dot(dn)) / gn;
            }
            if eik_scale != 0.0 {
                d_grad += n * (2.0 * (gn - 1.0) * eik_scale);
            }
        }
        field.backward_point(&mut smp.pe, settings.beta, d_sdf[i], &d_geo, d_grad, sink);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{GradBuffer, ParamId};
    use crate::geometry::field::FieldConfig;
    use crate::geometry::grid::GridSchedule;
    use crate::math::Aabb;

    fn tiny_field(seed: u64) -> SdfField {
        let cfg = FieldConfig {
            grid: GridSchedule {
                levels: 2,
                min_res: 4,
                max_res: 6,
                channels: 2,
                ..GridSchedule::desk()
            },
            hidden: 8,
            geo_features: 3,
            head_hidden: 6,
            pos_freqs: 1,
            dir_freqs: 1,
            sh_degree: 2,
            grid_init: 0.05,
            init_variance: 0.15,
            ..FieldConfig::default()
        };
        SdfField::new(cfg, Aabb::cube(1.0), seed).unwrap()
    }

    fn settings(head: usize) -> RenderSettings {
        RenderSettings {
            n_samples: 24,
            background: [1.0, 1.0, 1.0],
            head,
            beta: 2.0,
        }
    }

    #[test]
    fn empty_mask_gives_background() {
        let f = tiny_field(0);
        let mask = MaskGrid::empty(8, f.bounds);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0));
        let t = render_ray(&f, Some(&mask), &ray, &settings(0), 0.5);
        assert_eq!(t.output.acc, 0.0);
        assert_eq!(t.output.rgb, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn ray_backward_matches_finite_differences() {
        let mut f = tiny_field(5);
        let ray = Ray::new(Vec3::new(0.2, -0.1, 3.0), Vec3::new(-0.05, 0.03, -1.0));
        let head = 1;
        let st = settings(head);
        let g = RayGrad {
            rgb: [0.3, -0.7, 0.5],
            depth: 0.4,
            normal: Vec3::new(0.2, 0.5, -0.3),
            acc: -0.6,
        };
        let eik = 0.05;
        let objective = |f: &SdfField| {
            let t = render_ray(f, None, &ray, &st, 0.37);
            let o = t.output;
            let mut l = g.depth * o.depth + g.acc * o.acc + g.normal.dot(o.normal);
            for c in 0..3 {
                l += g.rgb[c] * o.rgb[c];
            }
            l + eik * t.eikonal_sum()
        };
        let mut t = render_ray(&f, None, &ray, &st, 0.37);
        assert!(t.output.acc > 0.05, "ray should see some surface, acc = {}", t.output.acc);
        let mut buf = GradBuffer::for_store(&f.store);
        backward_ray(&f, &mut t, &st, &g, eik, &mut buf);
        let ids: Vec<ParamId> = f
            .grids
            .iter()
            .chain(&f.sdf_net.weights)
            .chain(&f.heads[head].weights)
            .chain(&f.heads[head].biases)
            .chain(std::iter::once(&f.variance))
            .copied()
            .collect();
        let mut worst: f64 = 0.0;
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
                worst = worst.max(err);
                assert!(err < 1e-4, "{}[{i}]: fd {fd} vs {}", f.store.param(id).name, analytic[i]);
            }
        }
        assert!(worst < 1e-4);
    }
}
