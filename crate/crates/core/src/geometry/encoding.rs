//! Positional (frequency) and spherical-harmonic input encodings.

use crate::math::Vec3;

/// `[x, sin(2^k π x), cos(2^k π x)]` for `k < freqs`, length `3 + 6·freqs`.
pub fn positional(x: Vec3, freqs: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(&x.to_array());
    for k in 0..freqs {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for a in 0..3 {
            let s = f * x[a];
            out.push(s.sin());
            out.push(s.cos());
        }
    }
}

pub fn positional_len(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Real spherical harmonics of a unit direction, `degree²` coefficients (degree ≤ 4).
pub fn spherical_harmonics(d: Vec3, degree: usize, out: &mut Vec<f64>) {
    assert!((1..=4).contains(&degree), "spherical harmonics degree must be in 1..=4");
    let (x, y, z) = (d.x, d.y, d.z);
    out.push(0.282_094_791_773_878_14);
    if degree > 1 {
        out.push(-0.488_602_511_902_919_9 * y);
        out.push(0.488_602_511_902_919_9 * z);
        out.push(-0.488_602_511_902_919_9 * x);
    }
    if degree > 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.push(1.092_548_430_592_079_2 * x * y);
        out.push(-1.092_548_430_592_079_2 * y * z);
        out.push(0.946_174_695_757_56 * zz - 0.315_391_565_252_52);
        out.push(-1.092_548_430_592_079_2 * x * z);
        out.push(0.546_274_215_296_039_6 * (xx - yy));
    }
    if degree > 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out.push(0.590_043_589_926_643_5 * y * (-3.0 * xx + yy));
        out.push(2.890_611_442_640_554 * x * y * z);
        out.push(0.457_045_799_464_465_7 * y * (1.0 - 5.0 * zz));
        out.push(0.373_176_332_590_115_4 * z * (5.0 * zz - 3.0));
        out.push(0.457_045_799_464_465_7 * x * (1.0 - 5.0 * zz));
        out.push(1.445_305_721_320_277 * z * (xx - yy));
        out.push(0.590_043_589_926_643_5 * x * (-xx + 3.0 * yy));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths() {
        let mut v = Vec::new();
        positional(Vec3::new(0.1, 0.2, 0.3), 4, &mut v);
        assert_eq!(v.len(), positional_len(4));
        v.clear();
        spherical_harmonics(Vec3::new(0.0, 0.0, 1.0), 4, &mut v);
        assert_eq!(v.len(), 16);
    }

    #[test]
    fn sh_band_zero_and_one_are_orthonormal_on_sphere() {
        // Monte-Carlo-free check: the degree-1 bands integrate to 4π/3·c² per axis.
        let n = 200;
        let mut acc = [0.0; 4];
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut v = Vec::new();
            spherical_harmonics(Vec3::new(r * phi.cos(), r * phi.sin(), z), 2, &mut v);
            for k in 0..4 {
                acc[k] += v[k] * v[k] * 4.0 * std::f64::consts::PI / n as f64;
            }
        }
        for a in acc {
            assert!((a - 1.0).abs() < 0.02, "{a}");
        }
    }
}
