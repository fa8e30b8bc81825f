//! Image quality metrics.

use crate::error::{Error, Result};
use crate::imaging::Image;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::validation(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("images are empty"));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / (3 * a.len()) as f64)
}

/// `10·log10(1/MSE)` for images in `[0,1]`; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// PSNR restricted to pixels where `mask` is true.
pub fn masked_psnr(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    check_dims(a, b)?;
    if mask.len() != a.len() {
        return Err(Error::validation("mask size differs from the image"));
    }
    let (mut s, mut n) = (0.0, 0usize);
    for ((p, q), &m) in a.data.iter().zip(&b.data).zip(mask) {
        if m {
            s += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::validation("mask selects no pixel"));
    }
    Ok(if s == 0.0 { f64::INFINITY } else { -10.0 * (s / n as f64).log10() })
}

/// BT.601 luma.
pub fn luma(img: &Image) -> Vec<f64> {
    img.data.iter().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
}

fn gaussian_kernel() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let x = i as f64 - SSIM_RADIUS as f64;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter evaluated only where the full window fits.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS;
    let (ow, oh) = (w - 2 * r, h - 2 * r);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = k.iter().enumerate().map(|(i, kv)| kv * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = k.iter().enumerate().map(|(i, kv)| kv * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean SSIM over luma with an 11×11 Gaussian window (σ = 1.5), averaged
/// over window positions that lie fully inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w <= 2 * SSIM_RADIUS || h <= 2 * SSIM_RADIUS {
        return Err(Error::validation(format!(
            "SSIM needs images larger than {0}×{0}",
            2 * SSIM_RADIUS + 1
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let k = gaussian_kernel();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let ux = filter_valid(&x, w, h, &k);
    let uy = filter_valid(&y, w, h, &k);
    let uxx = filter_valid(&prod(&x, &x), w, h, &k);
    let uyy = filter_valid(&prod(&y, &y), w, h, &k);
    let uxy = filter_valid(&prod(&x, &y), w, h, &k);
    let n = ux.len();
    let mut total = 0.0;
    for i in 0..n {
        let vx = uxx[i] - ux[i] * ux[i];
        let vy = uyy[i] - uy[i] * uy[i];
        let vxy = uxy[i] - ux[i] * uy[i];
        let num = (2.0 * ux[i] * uy[i] + SSIM_C1) * (2.0 * vxy + SSIM_C2);
        let den = (ux[i] * ux[i] + uy[i] * uy[i] + SSIM_C1) * (vx + vy + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grey(w: u32, h: u32, f: impl Fn(f64, f64) -> f64) -> Image {
        Image::from_fn(w, h, |x, y| {
            let v = f(x as f64, y as f64);
            [v, v, v]
        })
    }

    fn random_image(seed: u64, w: u32, h: u32) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn psnr_closed_form_and_sentinel() {
        let a = Image::new(8, 8, [0.5; 3]);
        let b = Image::new(8, 8, [0.6; 3]);
        // Uniform error 0.1 → MSE 0.01 → 20 dB.
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Image::new(4, 8, [0.5; 3])).is_err());
    }

    #[test]
    fn psnr_matches_two_pass_oracle() {
        let a = random_image(1, 23, 17);
        let b = random_image(2, 23, 17);
        let flat = |i: &Image| i.data.iter().flatten().copied().collect::<Vec<f64>>();
        let (fa, fb) = (flat(&a), flat(&b));
        let diffs: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x - y).collect();
        let mut sq = 0.0;
        for d in &diffs {
            sq += d * d;
        }
        let oracle = 10.0 * (1.0 / (sq / diffs.len() as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-10);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_negative_and_symmetry() {
        let a = random_image(3, 32, 32);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = Image {
            data: a.data.iter().map(|p| p.map(|v| 1.0 - v)).collect(),
            ..a.clone()
        };
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        let b = random_image(4, 32, 32);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ssim_matches_reference_values() {
        // Values from a widely used reference implementation (Gaussian
        // weights, σ = 1.5, population covariance, data range 1).
        let a = grey(64, 64, |x, y| 0.5 + 0.4 * (0.3 * x).sin() * (0.2 * y).cos());
        let b = grey(64, 64, |x, y| {
            (0.5 + 0.4 * (0.3 * x).sin() * (0.2 * y).cos() + 0.1 * (0.7 * x + 0.5 * y).sin()).clamp(0.0, 1.0)
        });
        let neg = grey(64, 64, |x, y| 1.0 - (0.5 + 0.4 * (0.3 * x).sin() * (0.2 * y).cos()));
        assert!((ssim(&a, &b).unwrap() - 0.793_235_887_695_615_6).abs() < 1e-4);
        assert!((ssim(&a, &neg).unwrap() + 0.733_046_990_865_194_2).abs() < 1e-4);
    }

    #[test]
    fn masked_psnr_ignores_unselected_pixels() {
        let a = Image::new(4, 1, [0.5; 3]);
        let mut b = a.clone();
        b.data[0] = [0.6; 3];
        b.data[3] = [0.0; 3];
        let mask = [true, true, false, false];
        // Errors 0.1 on one of two selected pixels → MSE 0.005.
        assert!((masked_psnr(&a, &b, &mask).unwrap() - 10.0 * 200f64.log10()).abs() < 1e-12);
    }
}
