//! Every stage in one process: synthesize, reconstruct geometry, bake
//! appearance, package and evaluate.
//!
//! `cargo run --release --example full_pipeline -- [out_dir] [geometry_steps] [appearance_steps]`

use std::path::PathBuf;
use std::time::Instant;

use surfbake::appearance::{prepare_bake_mesh, render_view, train_appearance, AppearanceConfig};
use surfbake::dataset::{generate_synthetic_scene, SceneSpec};
use surfbake::eval::{chamfer_surfaces, psnr, ssim, MeshSurface};
use surfbake::geometry::{extract_mesh, FieldAt, GeometryConfig, GeometryTrainer};
use surfbake::package::{export_package, import_package};

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().cloned().unwrap_or_else(|| "target/full_pipeline".into()));
    let geo_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let app_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let clock = Instant::now();

    let spec = SceneSpec {
        views: 30,
        ..SceneSpec::default()
    };
    let data = generate_synthetic_scene(&spec)?;
    let held_out = generate_synthetic_scene(&SceneSpec {
        views: 5,
        seed: 99,
        ..spec.clone()
    })?;
    println!("[{:6.1}s] dataset: {} views", clock.elapsed().as_secs_f64(), data.frames.len());

    let mut trainer = GeometryTrainer::new(
        &data,
        GeometryConfig {
            steps: geo_steps,
            ..GeometryConfig::default()
        },
    )?;
    trainer.run(None, |_| {})?;
    let at = FieldAt {
        field: &trainer.field,
        beta: trainer.final_beta(),
    };
    let dense = extract_mesh(&at, &trainer.field.bounds, 96)?;
    let chamfer = chamfer_surfaces(&MeshSurface::new(&dense)?, &spec.primitive, 50_000)?;
    println!(
        "[{:6.1}s] geometry: {} faces, Chamfer to the oracle {chamfer:.5}",
        clock.elapsed().as_secs_f64(),
        dense.face_count()
    );

    let config = AppearanceConfig {
        steps: app_steps,
        resolution: 128,
        ..AppearanceConfig::default()
    };
    let (mesh, atlas) = prepare_bake_mesh(&dense, Some(&at), config.face_budget, config.resolution)?;
    let (model, log) = train_appearance(&data, &mesh, &atlas, config)?;
    println!(
        "[{:6.1}s] appearance: {} faces, final batch PSNR {:.2} dB",
        clock.elapsed().as_secs_f64(),
        mesh.face_count(),
        log.last().map(|l| l.psnr()).unwrap_or(f64::NAN)
    );

    let report = export_package(&mesh, &atlas, &model, &out)?;
    let pkg = import_package(&out)?;
    let (mut p, mut s) = (0.0, 0.0);
    for f in &held_out.frames {
        let img = render_view(&pkg.mesh, &pkg.atlas, &pkg.model, &f.camera)?;
        p += psnr(&img, &f.image)?;
        s += ssim(&img, &f.image)?;
    }
    let n = held_out.frames.len() as f64;
    println!(
        "[{:6.1}s] package {:.2} MB in {}; held-out PSNR {:.2} dB, SSIM {:.4}",
        clock.elapsed().as_secs_f64(),
        report.total() as f64 / 1e6,
        out.display(),
        p / n,
        s / n
    );
    Ok(())
}
