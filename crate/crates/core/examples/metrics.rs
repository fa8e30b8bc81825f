//! Image and geometry metrics on small hand-made inputs.
//!
//! `cargo run --release --example metrics -- [out_dir]`

use std::path::PathBuf;

use surfbake::dataset::Primitive;
use surfbake::eval::{chamfer_surfaces, error_map, psnr, ssim, MeshSurface};
use surfbake::geometry::extract_mesh;
use surfbake::imaging::Image;
use surfbake::math::Aabb;

fn main() -> surfbake::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/metrics".into()));
    std::fs::create_dir_all(&out).map_err(|e| surfbake::Error::io(&out, e))?;

    let reference = Image::from_fn(64, 64, |x, y| {
        let c = if (x / 8 + y / 8) % 2 == 0 { 0.8 } else { 0.2 };
        [c, 0.5 * c, 1.0 - c]
    });
    let shifted = Image::from_fn(64, 64, |x, y| {
        let mut p = reference.get(x, y);
        p[0] = (p[0] + 0.1).min(1.0);
        p
    });
    let blurred = Image::from_fn(64, 64, |x, y| {
        let mut acc = [0.0; 3];
        for (dx, dy) in [(0i32, 0i32), (1, 0), (0, 1), (-1, 0), (0, -1)] {
            let p = reference.get((x as i32 + dx).clamp(0, 63) as u32, (y as i32 + dy).clamp(0, 63) as u32);
            for c in 0..3 {
                acc[c] += p[c] / 5.0;
            }
        }
        acc
    });
    for (name, img) in [("shifted", &shifted), ("blurred", &blurred)] {
        println!(
            "{name:8} PSNR {:6.2} dB  SSIM {:.4}",
            psnr(img, &reference)?,
            ssim(img, &reference)?
        );
        error_map(img, &reference)?.save_png(&out.join(format!("error_{name}.png")))?;
    }

    let sphere = Primitive::Sphere { radius: 0.6 };
    for res in [16, 32, 64] {
        let mesh = extract_mesh(&sphere, &Aabb::cube(1.0), res)?;
        let d = chamfer_surfaces(&MeshSurface::new(&mesh)?, &sphere, 20_000)?;
        println!("sphere extracted at {res:3}³: {} faces, Chamfer {d:.5}", mesh.face_count());
    }
    Ok(())
}
