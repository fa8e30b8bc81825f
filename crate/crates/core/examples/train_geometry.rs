//! Train the SDF field on a synthetic oracle scene and extract a mesh.
//!
//! `cargo run --release --example train_geometry -- [sphere|box|bowl] [steps] [out_dir] [frozen_beta|-] [nodepth]`

use std::path::PathBuf;
use std::time::Instant;

use surfbake::dataset::{generate_synthetic_scene, Primitive, SceneSpec};
use surfbake::geometry::{extract_mesh, FieldAt, GeometryConfig, GeometryTrainer};

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let shape = args.first().map(String::as_str).unwrap_or("sphere");
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let out = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "target/train_geometry".into()));
    std::fs::create_dir_all(&out).map_err(|e| surfbake::Error::io(&out, e))?;

    let spec = SceneSpec {
        primitive: Primitive::parse(shape)?,
        ..SceneSpec::default()
    };
    let data = generate_synthetic_scene(&spec)?;
    let mut config = GeometryConfig {
        steps,
        ..GeometryConfig::default()
    };
    config.field.grid.frozen_beta = args.get(3).and_then(|s| s.parse().ok());
    config.use_depth_priors = args.get(4).map(|s| s != "nodepth").unwrap_or(true);
    let mut trainer = GeometryTrainer::new(&data, config)?;
    let start = Instant::now();
    trainer.run(None, |log| {
        if log.step % 50 == 0 {
            println!(
                "step {:5}  loss {:.5}  rgb {:.5}  eik {:.4}  depth {:.4}  beta {:.2}  occ {:.3}  s {:.1}  pts {}  {:.1}s",
                log.step,
                log.losses.total,
                log.losses.rgb,
                log.losses.eikonal,
                log.losses.depth,
                log.beta,
                log.occupancy,
                log.sharpness,
                log.points,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("trained {steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    trainer.save_checkpoint(&out.join("geometry.ckpt"))?;

    let at = FieldAt {
        field: &trainer.field,
        beta: trainer.final_beta(),
    };
    let mesh = extract_mesh(&at, &trainer.field.bounds, 128)?;
    let signed: Vec<f64> = mesh.positions.iter().map(|&p| spec.primitive.sdf(p)).collect();
    let mut err: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
    err.sort_by(f64::total_cmp);
    println!(
        "signed mean {:.5}  p50 {:.5}  p90 {:.5}  p99 {:.5}",
        signed.iter().sum::<f64>() / signed.len() as f64,
        err[err.len() / 2],
        err[err.len() * 9 / 10],
        err[err.len() * 99 / 100]
    );
    let mean = err.iter().sum::<f64>() / err.len() as f64;
    println!(
        "mesh: {} vertices, {} faces, mean |sdf| at vertices {:.5}, max {:.5}",
        mesh.vertex_count(),
        mesh.face_count(),
        mean,
        err.iter().cloned().fold(0.0, f64::max)
    );
    Ok(())
}
