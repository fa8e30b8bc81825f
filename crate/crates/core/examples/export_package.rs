//! Bake a quick model, export it as a render package, import it back and
//! compare renders.
//!
//! `cargo run --release --example export_package -- [out_dir] [channels] [steps]`

use std::path::PathBuf;

use surfbake::appearance::{prepare_bake_mesh, render_view, train_appearance, AppearanceConfig};
use surfbake::dataset::{generate_synthetic_scene, SceneSpec};
use surfbake::geometry::extract_mesh;
use surfbake::package::{export_package, import_package};

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().cloned().unwrap_or_else(|| "target/export_package".into()));
    let channels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);

    let spec = SceneSpec {
        views: 20,
        ..SceneSpec::default()
    };
    let data = generate_synthetic_scene(&spec)?;
    let config = AppearanceConfig {
        steps,
        channels,
        resolution: 128,
        face_budget: 600,
        ..AppearanceConfig::default()
    };
    let dense = extract_mesh(&spec.primitive, &spec.bounds(), 48)?;
    let (mesh, atlas) = prepare_bake_mesh(&dense, Some(&spec.primitive), config.face_budget, config.resolution)?;
    let (model, _) = train_appearance(&data, &mesh, &atlas, config)?;

    let report = export_package(&mesh, &atlas, &model, &out)?;
    print!("{report}");
    let pkg = import_package(&out)?;
    let mut worst: f64 = 0.0;
    for f in data.frames.iter().take(5) {
        let a = render_view(&mesh, &atlas, &model, &f.camera)?;
        let b = render_view(&pkg.mesh, &pkg.atlas, &pkg.model, &f.camera)?;
        for (p, q) in a.data.iter().zip(&b.data) {
            for c in 0..3 {
                worst = worst.max((p[c] - q[c]).abs());
            }
        }
    }
    println!("max channel difference after round trip: {:.2}/255", worst * 255.0);
    Ok(())
}
