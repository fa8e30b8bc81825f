//! Rasterize an icosphere into a G-buffer and dump its channels as images.
//!
//! `cargo run --release --example rasterize_gbuffer -- [out_dir]`

use std::path::PathBuf;

use surfbake::dataset::Camera;
use surfbake::imaging::Image;
use surfbake::math::Vec3;
use surfbake::raster::{rasterize, unwrap_uv, TriangleMesh};

fn main() -> surfbake::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/rasterize_gbuffer".into()));
    std::fs::create_dir_all(&out).map_err(|e| surfbake::Error::io(&out, e))?;

    let mesh = TriangleMesh::icosphere(3, 0.6);
    let atlas = unwrap_uv(&mesh, 512)?;
    let cam = Camera::look_at(Vec3::new(1.2, 0.8, 1.9), Vec3::default(), Vec3::new(0.0, 1.0, 0.0), 220.0, 256, 256)?;
    let g = rasterize(&mesh, &atlas, &cam);
    let (w, h) = (g.width, g.height);
    let at = |x: u32, y: u32| (y * w + x) as usize;
    let hit = |i: usize| g.face[i] != u32::MAX;

    let bary = Image::from_fn(w, h, |x, y| if hit(at(x, y)) { g.bary[at(x, y)] } else { [0.0; 3] });
    let uv = Image::from_fn(w, h, |x, y| {
        let i = at(x, y);
        if hit(i) { [g.uv[i][0], g.uv[i][1], 0.0] } else { [0.0; 3] }
    });
    let normal = Image::from_fn(w, h, |x, y| {
        let i = at(x, y);
        if hit(i) {
            let n = g.normal[i];
            [0.5 + 0.5 * n.x, 0.5 + 0.5 * n.y, 0.5 + 0.5 * n.z]
        } else {
            [0.0; 3]
        }
    });
    let vcos = Image::from_fn(w, h, |x, y| {
        let i = at(x, y);
        if hit(i) { [g.v_cos[i].clamp(0.0, 1.0); 3] } else { [0.0; 3] }
    });
    for (name, img) in [("bary", &bary), ("uv", &uv), ("normal", &normal), ("v_cos", &vcos)] {
        img.save_png(&out.join(format!("{name}.png")))?;
    }
    println!(
        "{} of {} pixels covered, atlas utilization {:.3}, images in {}",
        g.covered().len(),
        w * h,
        atlas.utilization(),
        out.display()
    );
    Ok(())
}
