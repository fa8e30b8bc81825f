//! Clamp-to-edge bilinear sampling of a texel-major `R×R×K` array.
//!
//! Texel `(x, y)` has its centre at `((x + 0.5)/R, (y + 0.5)/R)` in uv space;
//! row `y` grows with `v`.

use crate::error::{Error, Result};

/// The four texels touched by one sample, with weights and their uv derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// Texel indices (`y * R + x`).
    pub texels: [usize; 4],
    pub weights: [f64; 4],
    pub dw_du: [f64; 4],
    pub dw_dv: [f64; 4],
}

pub fn footprint(resolution: usize, u: f64, v: f64) -> Result<Footprint> {
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::validation(format!("non-finite uv ({u}, {v})")));
    }
    let r = resolution as f64;
    let axis = |c: f64| {
        let s = c.clamp(0.0, 1.0) * r - 0.5;
        let i0 = s.floor();
        let f = s - i0;
        let i0 = i0 as i64;
        let lo = i0.clamp(0, resolution as i64 - 1) as usize;
        let hi = (i0 + 1).clamp(0, resolution as i64 - 1) as usize;
        // Outside [0,1] the sample is constant in that coordinate.
        let d = if (0.0..=1.0).contains(&c) { r } else { 0.0 };
        (lo, hi, f, d)
    };
    let (x0, x1, fx, dx) = axis(u);
    let (y0, y1, fy, dy) = axis(v);
    let texels = [y0 * resolution + x0, y0 * resolution + x1, y1 * resolution + x0, y1 * resolution + x1];
    let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let dw_du = [-(1.0 - fy) * dx, (1.0 - fy) * dx, -fy * dx, fy * dx];
    let dw_dv = [-(1.0 - fx) * dy, -fx * dy, (1.0 - fx) * dy, fx * dy];
    Ok(Footprint {
        texels,
        weights,
        dw_du,
        dw_dv,
    })
}

/// Texture shape descriptor for a flat texel-major buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextureShape {
    pub resolution: usize,
    pub channels: usize,
}

impl TextureShape {
    pub fn len(&self) -> usize {
        self.resolution * self.resolution * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_into(&self, data: &[f64], fp: &Footprint, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (t, w) in fp.texels.iter().zip(fp.weights) {
            let base = t * self.channels;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * data[base + c];
            }
        }
    }

    pub fn sample(&self, data: &[f64], u: f64, v: f64) -> Result<Vec<f64>> {
        let fp = footprint(self.resolution, u, v)?;
        let mut out = vec![0.0; self.channels];
        self.sample_into(data, &fp, &mut out);
        Ok(out)
    }

    /// `(∂value/∂u, ∂value/∂v)` per channel.
    pub fn uv_gradient(&self, data: &[f64], fp: &Footprint) -> (Vec<f64>, Vec<f64>) {
        let mut du = vec![0.0; self.channels];
        let mut dv = vec![0.0; self.channels];
        for i in 0..4 {
            let base = fp.texels[i] * self.channels;
            for c in 0..self.channels {
                du[c] += fp.dw_du[i] * data[base + c];
                dv[c] += fp.dw_dv[i] * data[base + c];
            }
        }
        (du, dv)
    }

    /// Distribute `upstream` to the footprint texels by bilinear weight.
    pub fn backward(&self, fp: &Footprint, upstream: &[f64], mut add: impl FnMut(usize, f64)) {
        for (t, w) in fp.texels.iter().zip(fp.weights) {
            if w == 0.0 {
                continue;
            }
            let base = t * self.channels;
            for (c, g) in upstream.iter().enumerate() {
                add(base + c, w * g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_centre_returns_texel() {
        let shape = TextureShape {
            resolution: 4,
            channels: 2,
        };
        let data: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let v = shape.sample(&data, 2.5 / 4.0, 1.5 / 4.0).unwrap();
        assert_eq!(v, vec![data[(4 + 2) * 2], data[(4 + 2) * 2 + 1]]);
    }

    #[test]
    fn weights_partition_unity() {
        for &(u, v) in &[(0.0, 0.0), (0.33, 0.71), (1.0, 0.5), (0.01, 0.99)] {
            let fp = footprint(8, u, v).unwrap();
            assert!((fp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(footprint(8, f64::NAN, 0.0).is_err());
    }
}
