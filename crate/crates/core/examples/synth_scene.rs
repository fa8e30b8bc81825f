//! Render a synthetic oracle scene and write it as a NeRF-style dataset.
//!
//! `cargo run --release --example synth_scene -- [sphere|box|bowl] [out_dir] [views] [resolution]`

use std::path::PathBuf;

use surfbake::dataset::{generate_synthetic_scene, load_dataset, save_dataset, Primitive, SceneSpec};

fn main() -> surfbake::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = SceneSpec {
        primitive: Primitive::parse(args.first().map(String::as_str).unwrap_or("bowl"))?,
        views: args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20),
        resolution: args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64),
        ..SceneSpec::default()
    };
    let out = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "target/synth_scene".into()));
    let data = generate_synthetic_scene(&spec)?;
    save_dataset(&data, &out)?;

    let back = load_dataset(&out)?;
    let covered: usize = back
        .frames
        .iter()
        .filter_map(|f| f.mask.as_ref())
        .map(|m| m.iter().filter(|&&b| b).count())
        .sum();
    println!(
        "wrote {} frames of {}² to {} ({} covered pixels, depth priors: {})",
        back.frames.len(),
        spec.resolution,
        out.display(),
        covered,
        back.has_depth_priors()
    );
    Ok(())
}
