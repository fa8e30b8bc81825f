//! Bake an implicit texture and neural shader onto the analytic oracle
//! surface, then score held-out views.
//!
//! `cargo run --release --example bake_appearance -- [lambertian|glossy] [steps] [enc|noenc] [face_budget] [views] [shininess] [checker|solid] [alpha] [resolution]`

use std::time::Instant;

use surfbake::appearance::{prepare_bake_mesh, render_view, AppearanceConfig, AppearanceTrainer};
use surfbake::dataset::{generate_synthetic_scene, Albedo, SceneSpec};
use surfbake::eval::{psnr, ssim};
use surfbake::geometry::extract_mesh;

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scene = args.first().map(String::as_str).unwrap_or("lambertian");
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let encode = args.get(2).map(|s| s != "noenc").unwrap_or(true);
    let budget: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let views: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(50);
    let shininess: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(24.0);
    let albedo = Albedo::parse(args.get(6).map(String::as_str).unwrap_or("checker"))?;

    let spec = SceneSpec {
        resolution: 128,
        specular: if scene == "glossy" { 0.6 } else { 0.0 },
        shininess,
        views,
        albedo,
        ..SceneSpec::default()
    };
    let train = generate_synthetic_scene(&spec)?;
    let held_out = generate_synthetic_scene(&SceneSpec {
        views: 10,
        seed: 1000,
        ..spec.clone()
    })?;

    let dense = extract_mesh(&spec.primitive, &spec.bounds(), 64)?;
    let defaults = AppearanceConfig::default();
    let config = AppearanceConfig {
        steps,
        alpha: args.get(7).and_then(|s| s.parse().ok()).unwrap_or(defaults.alpha),
        resolution: args.get(8).and_then(|s| s.parse().ok()).unwrap_or(defaults.resolution),
        view_encoding: encode,
        face_budget: budget,
        ..AppearanceConfig::default()
    };
    let (mesh, atlas) = prepare_bake_mesh(&dense, Some(&spec.primitive), config.face_budget, config.resolution)?;
    println!(
        "baked mesh: {} faces, atlas cell {:.2} texels, utilization {:.3}",
        mesh.face_count(),
        atlas.cell,
        atlas.utilization()
    );

    let mut trainer = AppearanceTrainer::new(&train, &mesh, &atlas, config)?;
    println!("{} training fragments", trainer.sample_count());
    let start = Instant::now();
    trainer.run(None, |log| {
        if log.step % 250 == 0 {
            println!(
                "step {:5}  loss {:.5}  batch PSNR {:.2}  {:.1}s",
                log.step,
                log.loss,
                log.psnr(),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());

    let (mut p, mut s) = (0.0, 0.0);
    for f in &held_out.frames {
        let img = render_view(&mesh, &atlas, &trainer.model, &f.camera)?;
        p += psnr(&img, &f.image)?;
        s += ssim(&img, &f.image)?;
    }
    let n = held_out.frames.len() as f64;
    println!("held-out PSNR {:.3} dB  SSIM {:.4}", p / n, s / n);
    Ok(())
}
