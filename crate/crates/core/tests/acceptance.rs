//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance [-- name...]` runs every criterion,
//! or only those whose name contains one of the given words. Criteria listed in
//! `KNOWN_FAILURES` still run and print FAIL, but do not fail the process as
//! long as only their known clause fails; any other failure does. The
//! analysis behind each known failure lives in the project decision log.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfbake::appearance::{
    prepare_bake_mesh, render_view, AppearanceConfig, AppearanceModel, AppearanceTrainer, FragmentScratch,
    InitOptions, ViewEncoding,
};
use surfbake::dataset::{generate_synthetic_scene, Camera, Dataset, Primitive, SceneSpec};
use surfbake::diffmath::gradcheck::{central_difference, check, compare, CheckReport, DEFAULT_EPS, DEFAULT_FLOOR};
use surfbake::diffmath::{footprint, Activation, GradBuffer, Mlp, MlpSpec, MlpTrace, ParamId, ParamStore, TextureShape};
use surfbake::eval::chamfer::{chamfer_points, chamfer_surfaces, MeshSurface, DEFAULT_POINTS};
use surfbake::eval::{psnr, ssim};
use surfbake::geometry::render::{backward_ray, render_ray, RayGrad, RenderSettings};
use surfbake::geometry::{
    eikonal_residual, extract_mesh, FieldAt, FieldConfig, GeometryConfig, GeometryTrainer, GridSchedule, SdfField,
};
use surfbake::imaging::Image;
use surfbake::math::{Aabb, Ray, Vec3};
use surfbake::package::{export_package, import_package};
use surfbake::raster::{raster_backward, rasterize, unwrap_uv, GBuffer, TriangleMesh, UvAtlas};

/// Criteria expected to fail; see the decision log for the analysis.
const KNOWN_FAILURES: &[&str] = &["packaging", "view_aware_encoding"];

struct Outcome {
    pass: bool,
    /// Clauses outside the known shortfall, which must hold even for a
    /// criterion listed in `KNOWN_FAILURES`.
    locked: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        locked: pass,
        detail,
    }
}

type Run = surfbake::Result<Outcome>;

// ---------------------------------------------------------------- gradients

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randv(r: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-s..s)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Finite-difference every parameter value of `ids`, reached through `store`.
fn store_fd<T>(
    obj: &mut T,
    store: fn(&mut T) -> &mut ParamStore,
    ids: &[ParamId],
    mut f: impl FnMut(&T) -> f64,
) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            (0..store(obj).value(id).len())
                .map(|i| {
                    let orig = store(obj).value(id)[i];
                    store(obj).value_mut(id)[i] = orig + DEFAULT_EPS;
                    let fp = f(obj);
                    store(obj).value_mut(id)[i] = orig - DEFAULT_EPS;
                    let fm = f(obj);
                    store(obj).value_mut(id)[i] = orig;
                    (fp - fm) / (2.0 * DEFAULT_EPS)
                })
                .collect()
        })
        .collect()
}

fn store_report(buf: &GradBuffer, store: &ParamStore, ids: &[ParamId], numeric: &[Vec<f64>]) -> CheckReport {
    ids.iter().zip(numeric).fold(CheckReport::default(), |acc, (&id, n)| {
        acc.merge(compare(&buf.dense(id, store.value(id).len()), n, DEFAULT_FLOOR))
    })
}

fn mlp_check() -> surfbake::Result<CheckReport> {
    let mut r = rng(1);
    let spec = MlpSpec::new(
        vec![7, 16, 16, 3],
        vec![Activation::Relu, Activation::Relu, Activation::Sigmoid],
    )?;
    let mut store = ParamStore::new();
    let mlp = Mlp::new(spec, &mut store, "mlp", 0.0, &mut r)?;
    let x = randv(&mut r, 7, 1.0);
    let up = randv(&mut r, 3, 1.0);
    let mut trace = MlpTrace::new();
    mlp.forward(&store, &x, &mut trace)?;
    let mut buf = GradBuffer::for_store(&store);
    let mut dx = vec![0.0; 7];
    mlp.backward(&store, &mut trace, &up, &mut buf, Some(&mut dx))?;
    let ids: Vec<ParamId> = mlp.weights.iter().chain(&mlp.biases).copied().collect();
    let numeric = store_fd(&mut store, |s| s, &ids, |s| dot(&mlp.forward_vec(s, &x).unwrap(), &up));
    let params = store_report(&buf, &store, &ids, &numeric);
    let input = check(|xs| dot(&mlp.forward_vec(&store, xs).unwrap(), &up), &x, &dx);
    Ok(params.merge(input))
}

/// A uv at least 1e-3 texels away from the bilinear kinks at texel centres.
fn smooth_uv(r: &mut ChaCha8Rng, res: usize) -> [f64; 2] {
    loop {
        let uv = [r.gen_range(0.02..0.98), r.gen_range(0.02..0.98)];
        let ok = uv.iter().all(|c| {
            let s = c * res as f64 - 0.5;
            let f = s - s.floor();
            f > 1e-3 && f < 1.0 - 1e-3
        });
        if ok {
            return uv;
        }
    }
}

/// (texel report, uv report)
fn bilinear_check() -> surfbake::Result<(CheckReport, CheckReport)> {
    let mut r = rng(2);
    let shape = TextureShape {
        resolution: 8,
        channels: 5,
    };
    let data = randv(&mut r, shape.len(), 1.0);
    let (mut tex, mut uvr) = (CheckReport::default(), CheckReport::default());
    for _ in 0..8 {
        let uv = smooth_uv(&mut r, shape.resolution);
        let up = randv(&mut r, shape.channels, 1.0);
        let fp = footprint(shape.resolution, uv[0], uv[1])?;
        let mut dt = vec![0.0; data.len()];
        shape.backward(&fp, &up, |i, g| dt[i] += g);
        tex = tex.merge(check(|d| dot(&shape.sample(d, uv[0], uv[1]).unwrap(), &up), &data, &dt));
        let (du, dv) = shape.uv_gradient(&data, &fp);
        let analytic = [dot(&du, &up), dot(&dv, &up)];
        uvr = uvr.merge(check(|p| dot(&shape.sample(&data, p[0], p[1]).unwrap(), &up), &uv, &analytic));
    }
    Ok((tex, uvr))
}

/// (feature report, view-cosine report)
fn encoding_check() -> surfbake::Result<(CheckReport, CheckReport)> {
    let mut r = rng(3);
    let enc = ViewEncoding::new(12, 0.3)?;
    let (mut fr, mut vr) = (CheckReport::default(), CheckReport::default());
    for _ in 0..8 {
        let f = randv(&mut r, 12, 1.0);
        let v = r.gen_range(0.0..1.0);
        let up = randv(&mut r, 12, 1.0);
        let mut df = vec![0.0; 12];
        let dv = enc.backward(&f, v, &up, &mut df);
        fr = fr.merge(check(|x| dot(&enc.encode(x, v), &up), &f, &df));
        vr = vr.merge(check(|x| dot(&enc.encode(&f, x[0]), &up), &[v], &[dv]));
    }
    Ok((fr, vr))
}

struct MicroScene {
    mesh: TriangleMesh,
    atlas: UvAtlas,
    camera: Camera,
    gbuffer: GBuffer,
}

fn micro_scene(res: usize) -> surfbake::Result<MicroScene> {
    let mut r = rng(4);
    let mut mesh = TriangleMesh::icosphere(1, 0.6);
    for p in &mut mesh.positions {
        *p += Vec3::new(r.gen_range(-0.03..0.03), r.gen_range(-0.03..0.03), r.gen_range(-0.03..0.03));
    }
    mesh.recompute_normals();
    let atlas = unwrap_uv(&mesh, res)?;
    let camera = Camera::look_at(Vec3::new(0.4, 0.7, 2.2), Vec3::default(), Vec3::new(0.0, 1.0, 0.0), 40.0, 32, 32)?;
    let gbuffer = rasterize(&mesh, &atlas, &camera);
    Ok(MicroScene {
        mesh,
        atlas,
        camera,
        gbuffer,
    })
}

/// Covered pixels whose smallest barycentric exceeds `margin`, best first.
fn interior_pixels(g: &GBuffer, margin: f64, n: usize) -> Vec<usize> {
    let mut px: Vec<(usize, f64)> = g
        .covered()
        .into_iter()
        .map(|i| (i, g.bary[i].iter().cloned().fold(f64::MAX, f64::min)))
        .filter(|&(_, m)| m > margin)
        .collect();
    // Spread the picks over the image rather than taking one cluster.
    px.sort_by_key(|&(i, _)| i);
    let stride = (px.len() / n.max(1)).max(1);
    px.into_iter().step_by(stride).take(n).map(|(i, _)| i).collect()
}

/// FD of `Σ_p up_p · uv_p(V)` over every vertex coordinate, using only
/// pixels that keep their face under the perturbation.
fn interior_chain_check() -> surfbake::Result<CheckReport> {
    let s = micro_scene(64)?;
    let mut r = rng(5);
    let pixels = interior_pixels(&s.gbuffer, 0.05, 24);
    let mut dl = vec![[0.0; 2]; s.gbuffer.face.len()];
    for &i in &pixels {
        dl[i] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
    }
    let grad = raster_backward(&s.mesh, &s.atlas, &s.gbuffer, &dl);
    let analytic: Vec<f64> = grad.iter().flat_map(|v| v.to_array()).collect();
    let x: Vec<f64> = s.mesh.positions.iter().flat_map(|v| v.to_array()).collect();
    let mut face_changed = false;
    let numeric = central_difference(
        |xs| {
            let mut m = s.mesh.clone();
            for (v, p) in m.positions.iter_mut().enumerate() {
                *p = Vec3::new(xs[3 * v], xs[3 * v + 1], xs[3 * v + 2]);
            }
            let g = rasterize(&m, &s.atlas, &s.camera);
            pixels
                .iter()
                .map(|&i| {
                    face_changed |= g.face[i] != s.gbuffer.face[i];
                    dl[i][0] * g.uv[i][0] + dl[i][1] * g.uv[i][1]
                })
                .sum()
        },
        &x,
        DEFAULT_EPS,
    );
    let mut rep = compare(&analytic, &numeric, DEFAULT_FLOOR);
    if face_changed {
        rep.max_rel = f64::INFINITY;
    }
    Ok(rep)
}

/// Texture → encoding → shader → squared error on three pixels of a
/// rasterized micro-scene, checked for texels, shader parameters, G-buffer
/// inputs and vertex positions through the interior uv chain.
fn pixel_chain_check() -> surfbake::Result<CheckReport> {
    let res = 64;
    let s = micro_scene(res)?;
    let init = InitOptions {
        seed: 6,
        noise: 1.0,
        lr_texture: 0.0,
        lr_shader: 0.0,
    };
    let mut model = AppearanceModel::new(res, ViewEncoding::new(8, 0.3)?, &[16, 16], [1.0; 3], init)?;
    let pixels = interior_pixels(&s.gbuffer, 0.05, 3);
    let mut r = rng(7);
    let targets: Vec<[f64; 3]> = pixels
        .iter()
        .map(|_| [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)])
        .collect();
    let loss = |m: &AppearanceModel, uv: &[[f64; 2]], vc: &[f64]| -> f64 {
        let mut sc = FragmentScratch::default();
        (0..uv.len())
            .map(|p| {
                let c = m.shade_fragment(uv[p], vc[p], &mut sc).unwrap();
                (0..3).map(|k| (c[k] - targets[p][k]).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let uv0: Vec<[f64; 2]> = pixels.iter().map(|&i| s.gbuffer.uv[i]).collect();
    let vc0: Vec<f64> = pixels.iter().map(|&i| s.gbuffer.v_cos[i]).collect();

    let mut buf = GradBuffer::for_store(&model.store);
    let mut sc = FragmentScratch::default();
    let mut d_uv = vec![[0.0; 2]; s.gbuffer.face.len()];
    let mut d_in = Vec::new();
    for (p, &i) in pixels.iter().enumerate() {
        let c = model.shade_fragment(uv0[p], vc0[p], &mut sc)?;
        let dl = [0, 1, 2].map(|k| 2.0 * (c[k] - targets[p][k]));
        let g = model.backward_fragment(&mut sc, vc0[p], dl, &mut buf)?;
        d_uv[i] = g.uv;
        d_in.extend([g.uv[0], g.uv[1], g.v_cos]);
    }

    let mut ids = vec![model.texture];
    ids.extend(model.shader.weights.iter().chain(&model.shader.biases));
    let numeric = store_fd(&mut model, |m| &mut m.store, &ids, |m| loss(m, &uv0, &vc0));
    let params = store_report(&buf, &model.store, &ids, &numeric);

    let x: Vec<f64> = uv0.iter().zip(&vc0).flat_map(|(u, v)| [u[0], u[1], *v]).collect();
    let inputs = check(
        |xs| {
            let uv: Vec<[f64; 2]> = xs.chunks(3).map(|c| [c[0], c[1]]).collect();
            let vc: Vec<f64> = xs.chunks(3).map(|c| c[2]).collect();
            loss(&model, &uv, &vc)
        },
        &x,
        &d_in,
    );

    // Vertex positions move uv; the view cosine is held at its G-buffer value.
    let grad = raster_backward(&s.mesh, &s.atlas, &s.gbuffer, &d_uv);
    let analytic: Vec<f64> = grad.iter().flat_map(|v| v.to_array()).collect();
    let xv: Vec<f64> = s.mesh.positions.iter().flat_map(|v| v.to_array()).collect();
    let mut face_changed = false;
    let verts = check(
        |xs| {
            let mut m = s.mesh.clone();
            for (v, p) in m.positions.iter_mut().enumerate() {
                *p = Vec3::new(xs[3 * v], xs[3 * v + 1], xs[3 * v + 2]);
            }
            let g = rasterize(&m, &s.atlas, &s.camera);
            face_changed |= pixels.iter().any(|&i| g.face[i] != s.gbuffer.face[i]);
            let uv: Vec<[f64; 2]> = pixels.iter().map(|&i| g.uv[i]).collect();
            loss(&model, &uv, &vc0)
        },
        &xv,
        &analytic,
    );
    let mut rep = params.merge(inputs).merge(verts);
    if face_changed {
        rep.max_rel = f64::INFINITY;
    }
    Ok(rep)
}

fn field_check() -> surfbake::Result<CheckReport> {
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
    let mut f = SdfField::new(cfg, Aabb::cube(1.0), 5)?;
    let ray = Ray::new(Vec3::new(0.2, -0.1, 3.0), Vec3::new(-0.05, 0.03, -1.0));
    let head = 1;
    let st = RenderSettings {
        n_samples: 24,
        background: [1.0, 1.0, 1.0],
        head,
        beta: 2.0,
    };
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
        g.depth * o.depth + g.acc * o.acc + g.normal.dot(o.normal) + dot(&g.rgb, &o.rgb) + eik * t.eikonal_sum()
    };
    let mut t = render_ray(&f, None, &ray, &st, 0.37);
    let mut buf = GradBuffer::for_store(&f.store);
    backward_ray(&f, &mut t, &st, &g, eik, &mut buf);
    let ids: Vec<ParamId> = f
        .grids
        .iter()
        .chain(&f.sdf_net.weights)
        .chain(&f.sdf_net.biases)
        .chain(&f.heads[head].weights)
        .chain(&f.heads[head].biases)
        .chain(std::iter::once(&f.variance))
        .copied()
        .collect();
    let numeric = store_fd(&mut f, |f| &mut f.store, &ids, objective);
    Ok(store_report(&buf, &f.store, &ids, &numeric))
}

fn gradient_suite() -> Run {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut note = |name: &str, rep: CheckReport, tol: f64| {
        let ok = rep.passes(tol);
        pass &= ok;
        lines.push(format!("{name} {:.1e}/{tol:.0e} ({} values)", rep.max_rel, rep.checked));
    };
    note("mlp", mlp_check()?, 1e-4);
    let (tex, uv) = bilinear_check()?;
    note("bilinear.texels", tex, 1e-6);
    note("bilinear.uv", uv, 1e-4);
    let (fr, vr) = encoding_check()?;
    note("encoding.f", fr, 1e-6);
    note("encoding.v", vr, 1e-4);
    note("interior_uv_chain", interior_chain_check()?, 1e-4);
    note("pixel_chain", pixel_chain_check()?, 1e-4);
    note("sdf_ray_render", field_check()?, 1e-4);
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    Ok(outcome(pass, format!("{}; {secs:.1}s < 60s", lines.join(", "))))
}

// ---------------------------------------------------------------- geometry

struct GeometryRun {
    chamfer: f64,
    eikonal: f64,
    secs: f64,
}

fn train_geometry(data: &Dataset, primitive: &Primitive, config: GeometryConfig) -> surfbake::Result<GeometryRun> {
    let start = Instant::now();
    let mut trainer = GeometryTrainer::new(data, config)?;
    trainer.run(None, |_| {})?;
    let at = FieldAt {
        field: &trainer.field,
        beta: trainer.final_beta(),
    };
    let mesh = extract_mesh(&at, &trainer.field.bounds, 128)?;
    let secs = start.elapsed().as_secs_f64();
    let chamfer = chamfer_surfaces(&MeshSurface::new(&mesh)?, primitive, DEFAULT_POINTS)?;
    let eikonal = eikonal_residual(&at, &mesh, 0.05, 10_000, 17)?;
    Ok(GeometryRun { chamfer, eikonal, secs })
}

struct Shared {
    sphere: Option<GeometryRun>,
    lambertian: Option<Baked>,
}

fn sphere_run(shared: &mut Shared) -> surfbake::Result<&GeometryRun> {
    if shared.sphere.is_none() {
        let spec = SceneSpec::default();
        let data = generate_synthetic_scene(&spec)?;
        shared.sphere = Some(train_geometry(&data, &spec.primitive, GeometryConfig::default())?);
    }
    Ok(shared.sphere.as_ref().unwrap())
}

fn geometry_oracle(shared: &mut Shared) -> Run {
    let radius = match SceneSpec::default().primitive {
        Primitive::Sphere { radius } => radius,
        other => panic!("default scene is not a sphere: {other:?}"),
    };
    let run = sphere_run(shared)?;
    let bound = 0.005 * radius;
    Ok(outcome(
        run.chamfer <= bound && run.eikonal < 0.1 && run.secs < 600.0,
        format!(
            "Chamfer {:.5} ≤ {bound:.4}, eikonal {:.4} < 0.1, {:.0}s < 600s",
            run.chamfer, run.eikonal, run.secs
        ),
    ))
}

fn mvs_ablation() -> Run {
    let spec = SceneSpec {
        primitive: Primitive::parse("bowl")?,
        ..SceneSpec::default()
    };
    let data = generate_synthetic_scene(&spec)?;
    let with = train_geometry(&data, &spec.primitive, GeometryConfig::default())?;
    let without = train_geometry(
        &data,
        &spec.primitive,
        GeometryConfig {
            use_depth_priors: false,
            ..GeometryConfig::default()
        },
    )?;
    let secs = with.secs + without.secs;
    Ok(outcome(
        with.chamfer < without.chamfer && secs < 1200.0,
        format!(
            "Chamfer with depth {:.5} < without {:.5}, {secs:.0}s < 1200s",
            with.chamfer, without.chamfer
        ),
    ))
}

fn progressive_grids(shared: &mut Shared) -> Run {
    let spec = SceneSpec::default();
    let data = generate_synthetic_scene(&spec)?;
    let mut config = GeometryConfig::default();
    // β = 1 keeps only the first (coarsest) grid level active.
    config.field.grid.frozen_beta = Some(1.0);
    let frozen = train_geometry(&data, &spec.primitive, config)?;
    let full = sphere_run(shared)?;
    Ok(outcome(
        full.chamfer < frozen.chamfer,
        format!(
            "Chamfer progressive {:.5} < frozen coarsest {:.5}",
            full.chamfer, frozen.chamfer
        ),
    ))
}

// ---------------------------------------------------------------- appearance

struct Baked {
    mesh: TriangleMesh,
    atlas: UvAtlas,
    model: AppearanceModel,
    psnr: f64,
    first_loss: f64,
    last_loss: f64,
    secs: f64,
}

/// Bake onto a mesh of the analytic surface (isolating the appearance
/// stage) from 50 views at 128², then score 10 held-out views.
fn bake(specular: f64, view_encoding: bool) -> surfbake::Result<Baked> {
    let spec = SceneSpec {
        resolution: 128,
        specular,
        ..SceneSpec::default()
    };
    let train = generate_synthetic_scene(&spec)?;
    let held_out = generate_synthetic_scene(&SceneSpec {
        views: 10,
        seed: 1000,
        ..spec.clone()
    })?;
    let config = AppearanceConfig {
        view_encoding,
        ..AppearanceConfig::default()
    };
    let dense = extract_mesh(&spec.primitive, &spec.bounds(), 64)?;
    let (mesh, atlas) = prepare_bake_mesh(&dense, Some(&spec.primitive), config.face_budget, config.resolution)?;
    let start = Instant::now();
    let mut trainer = AppearanceTrainer::new(&train, &mesh, &atlas, config)?;
    trainer.run(None, |_| {})?;
    let secs = start.elapsed().as_secs_f64();
    let history = &trainer.history;
    let first_loss = history.first().map(|l| l.loss).unwrap_or(f64::NAN);
    let last_loss = history.last().map(|l| l.loss).unwrap_or(f64::NAN);
    let mut total = 0.0;
    for f in &held_out.frames {
        total += psnr(&render_view(&mesh, &atlas, &trainer.model, &f.camera)?, &f.image)?;
    }
    let model = trainer.model.clone();
    Ok(Baked {
        psnr: total / held_out.frames.len() as f64,
        mesh,
        atlas,
        model,
        first_loss,
        last_loss,
        secs,
    })
}

fn view_aware() -> Run {
    let on = bake(0.6, true)?;
    let off = bake(0.6, false)?;
    let delta = on.psnr - off.psnr;
    let secs = on.secs + off.secs;
    Ok(Outcome {
        pass: delta >= 0.3 && secs < 900.0,
        locked: secs < 900.0,
        detail: format!(
            "Δ {delta:+.3} dB ≥ +0.3 (enabled {:.3}, disabled {:.3}), {secs:.0}s < 900s",
            on.psnr, off.psnr
        ),
    })
}

fn lambertian(shared: &mut Shared) -> surfbake::Result<&Baked> {
    if shared.lambertian.is_none() {
        shared.lambertian = Some(bake(0.0, true)?);
    }
    Ok(shared.lambertian.as_ref().unwrap())
}

fn appearance_oracle(shared: &mut Shared) -> Run {
    let b = lambertian(shared)?;
    Ok(outcome(
        b.psnr >= 28.0 && b.last_loss < b.first_loss,
        format!(
            "held-out PSNR {:.3} ≥ 28 dB, loss {:.4} → {:.5}, {:.0}s",
            b.psnr, b.first_loss, b.last_loss, b.secs
        ),
    ))
}

// ---------------------------------------------------------------- packaging

fn png_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn max_channel_error(a: &Image, b: &Image) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
        .fold(0.0, f64::max)
}

fn packaging(shared: &mut Shared) -> Run {
    let b = lambertian(shared)?;
    let tmp = tempfile::tempdir().map_err(|e| surfbake::Error::io(Path::new("tempdir"), e))?;
    let mut counts = Vec::new();
    for k in [8, 12, 16] {
        let init = InitOptions {
            seed: k as u64,
            noise: 1.0,
            lr_texture: 0.0,
            lr_shader: 0.0,
        };
        let m = AppearanceModel::new(b.atlas.resolution, ViewEncoding::new(k, 0.3)?, &[32, 32], [1.0; 3], init)?;
        let dir = tmp.path().join(format!("k{k}"));
        export_package(&b.mesh, &b.atlas, &m, &dir)?;
        counts.push((k, png_count(&dir), k / 4));
    }
    let counts_ok = counts.iter().all(|&(_, got, want)| got == want);

    let first = tmp.path().join("first");
    let report = export_package(&b.mesh, &b.atlas, &b.model, &first)?;
    let second = tmp.path().join("second");
    export_package(&b.mesh, &b.atlas, &b.model, &second)?;
    let pkg = import_package(&first)?;
    let third = tmp.path().join("reexport");
    export_package(&pkg.mesh, &pkg.atlas, &pkg.model, &third)?;
    let identical = files(&first) == files(&second) && files(&first) == files(&third);

    let mut worst: f64 = 0.0;
    let (mut within, mut covered) = (0usize, 0usize);
    for i in 0..5 {
        let a = i as f64 * std::f64::consts::TAU / 5.0;
        let eye = Vec3::new(2.4 * a.cos(), 0.8 * (i as f64 - 2.0) / 2.0, 2.4 * a.sin());
        let cam = Camera::look_at(eye, Vec3::default(), Vec3::new(0.0, 1.0, 0.0), 150.0, 128, 128)?;
        let x = render_view(&b.mesh, &b.atlas, &b.model, &cam)?;
        let y = render_view(&pkg.mesh, &pkg.atlas, &pkg.model, &cam)?;
        worst = worst.max(max_channel_error(&x, &y));
        let g = rasterize(&b.mesh, &b.atlas, &cam);
        for i in g.covered() {
            covered += 1;
            within += (0..3).all(|c| (x.data[i][c] - y.data[i][c]).abs() <= 3.0 / 255.0) as usize;
        }
    }
    let bytes = report.total();
    let limit = 50 * 1024 * 1024;
    let locked = counts_ok && identical && bytes < limit;
    Ok(Outcome {
        pass: locked && worst <= 3.0 / 255.0,
        locked,
        detail: format!(
            "PNGs {}, parity {:.2}/255 ≤ 3/255 on 5 cameras ({:.2}% of covered pixels within), re-export identical {identical}, package {:.2} MB < 50 MB",
            counts
                .iter()
                .map(|(k, got, _)| format!("K={k}→{got}"))
                .collect::<Vec<_>>()
                .join(" "),
            worst * 255.0,
            100.0 * within as f64 / covered.max(1) as f64,
            bytes as f64 / (1024.0 * 1024.0)
        ),
    })
}

// ---------------------------------------------------------------- metrics

fn metric_oracles() -> Run {
    let a = Image::new(16, 16, [0.25; 3]);
    let b = Image::new(16, 16, [0.35; 3]);
    let mse_case = Image::from_fn(16, 16, |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [0.2; 3] });
    let zero = Image::new(16, 16, [0.1; 3]);
    // Both pairs differ by exactly 0.1 everywhere: MSE 0.01.
    let p1 = psnr(&a, &b)?;
    let p2 = psnr(&mse_case, &zero)?;
    let psnr_ok = (p1 - 20.0).abs() < 1e-9 && (p2 - 20.0).abs() < 1e-9;

    let mut r = rng(8);
    let img = Image::from_fn(48, 40, |_, _| [r.gen(), r.gen(), r.gen()]);
    let s = ssim(&img, &img)?;
    let ssim_ok = (s - 1.0).abs() < 1e-12;

    let pts = |r: &mut ChaCha8Rng, n: usize| -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect()
    };
    let (pa, pb) = (pts(&mut r, 2000), pts(&mut r, 1800));
    let brute = |from: &[Vec3], to: &[Vec3]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| (*p - *q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    let slow = 0.5 * (brute(&pa, &pb) + brute(&pb, &pa));
    let fast = chamfer_points(&pa, &pb)?;
    let chamfer_ok = (slow - fast).abs() <= 1e-9;
    Ok(outcome(
        psnr_ok && ssim_ok && chamfer_ok,
        format!(
            "PSNR {p1:.12} / {p2:.12} dB, SSIM(a,a) {s:.15}, Chamfer |index − brute| {:.1e}",
            (slow - fast).abs()
        ),
    ))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: &str| filters.is_empty() || filters.iter().any(|f| n.contains(f.as_str()));
    let mut shared = Shared {
        sphere: None,
        lambertian: None,
    };
    type Criterion = fn(&mut Shared) -> Run;
    let criteria: [(&str, Criterion); 8] = [
        ("gradient_suite", |_| gradient_suite()),
        ("metric_oracles", |_| metric_oracles()),
        ("geometry_oracle", geometry_oracle),
        ("progressive_grids", progressive_grids),
        ("mvs_ablation", |_| mvs_ablation()),
        ("appearance_oracle", appearance_oracle),
        ("packaging", packaging),
        ("view_aware_encoding", |_| view_aware()),
    ];
    let mut unexpected = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !wanted(name) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = run(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        let (pass, locked, detail) = match result {
            Ok(o) => (o.pass, o.locked, o.detail),
            Err(e) => (false, false, format!("error: {e}")),
        };
        let known = KNOWN_FAILURES.contains(&name) && locked;
        let verdict = match (pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as a known failure)",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{verdict:<5} {name}: {detail} [{secs:.1}s]");
    }
    println!("acceptance: {ran} criteria run, {unexpected} unexpected failure(s)");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
