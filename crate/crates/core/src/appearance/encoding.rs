//! Gaussian view-aware weighting of texture features by the view cosine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEncoding {
    /// Gaussian width.
    pub alpha: f64,
    /// Channel centres, strictly increasing.
    pub centers: Vec<f64>,
    /// When false every weight is 1 (the ablation baseline).
    pub enabled: bool,
}

impl ViewEncoding {
    /// `k` centres spread evenly over `[0, 1]`.
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        let centers = match k {
            0 => Vec::new(),
            1 => vec![0.5],
            _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
        };
        let e = ViewEncoding {
            alpha,
            centers,
            enabled: true,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn disabled(k: usize) -> Result<Self> {
        let mut e = ViewEncoding::new(k, 0.3)?;
        e.enabled = false;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::validation("view encoding needs at least one channel"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation(format!("alpha must be positive and finite, got {}", self.alpha)));
        }
        if self.centers.windows(2).any(|w| !(w[1] > w[0])) || self.centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("channel centres must be finite and strictly increasing"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.centers.len()
    }

    /// Peak weight `1/(α√(2π))`.
    pub fn peak(&self) -> f64 {
        1.0 / (self.alpha * (2.0 * std::f64::consts::PI).sqrt())
    }

    #[inline]
    pub fn weight(&self, k: usize, v_cos: f64) -> f64 {
        if !self.enabled {
            return 1.0;
        }
        let d = v_cos - self.centers[k];
        self.peak() * (-d * d / (2.0 * self.alpha * self.alpha)).exp()
    }

    pub fn weights(&self, v_cos: f64) -> Vec<f64> {
        (0..self.channels()).map(|k| self.weight(k, v_cos)).collect()
    }

    /// `out = f ⊙ w(v_cos)`.
    pub fn encode_into(&self, f: &[f64], v_cos: f64, out: &mut [f64]) {
        for (k, (o, &x)) in out.iter_mut().zip(f).enumerate() {
            *o = x * self.weight(k, v_cos);
        }
    }

    pub fn encode(&self, f: &[f64], v_cos: f64) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.encode_into(f, v_cos, &mut out);
        out
    }

    /// Reverse pass: writes `∂L/∂f` into `df` and returns `∂L/∂v_cos`.
    pub fn backward(&self, f: &[f64], v_cos: f64, upstream: &[f64], df: &mut [f64]) -> f64 {
        let mut dv = 0.0;
        let a2 = self.alpha * self.alpha;
        for k in 0..f.len() {
            let w = self.weight(k, v_cos);
            df[k] = upstream[k] * w;
            if self.enabled {
                dv += upstream[k] * f[k] * w * (self.centers[k] - v_cos) / a2;
            }
        }
        dv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn peak_at_centre() {
        let e = ViewEncoding::new(12, 0.3).unwrap();
        for k in 0..12 {
            assert!((e.weight(k, e.centers[k]) - 1.329_807_601_338_109).abs() < 1e-12);
        }
        assert_eq!(e.centers[0], 0.0);
        assert_eq!(e.centers[11], 1.0);
    }

    #[test]
    fn zero_features_stay_zero() {
        let e = ViewEncoding::new(8, 0.3).unwrap();
        assert!(e.encode(&[0.0; 8], 0.37).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_is_nearest_centre() {
        let e = ViewEncoding::new(12, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: f64 = rng.gen_range(0.0..1.0);
            let w = e.weights(v);
            let argmax = (0..12).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            let nearest = (0..12)
                .min_by(|&a, &b| (v - e.centers[a]).abs().total_cmp(&(v - e.centers[b]).abs()))
                .unwrap();
            assert_eq!(argmax, nearest, "v_cos {v}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let e = ViewEncoding::new(6, 0.25).unwrap();
        let f = [0.3, -0.2, 0.7, 0.1, -0.5, 0.05];
        let up = [0.4, 0.1, -0.3, 0.8, 0.2, -0.6];
        let v = 0.43;
        let loss = |f: &[f64], v: f64| e.encode(f, v).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let mut df = [0.0; 6];
        let dv = e.backward(&f, v, &up, &mut df);
        let h = 1e-6;
        let fd = (loss(&f, v + h) - loss(&f, v - h)) / (2.0 * h);
        assert!((fd - dv).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {dv}");
        for k in 0..6 {
            let mut a = f;
            a[k] += h;
            let mut b = f;
            b[k] -= h;
            let fd = (loss(&a, v) - loss(&b, v)) / (2.0 * h);
            assert!((fd - df[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn disabled_is_identity() {
        let e = ViewEncoding::disabled(4).unwrap();
        let f = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(e.encode(&f, 0.9), f.to_vec());
        let mut df = [0.0; 4];
        assert_eq!(e.backward(&f, 0.9, &[1.0; 4], &mut df), 0.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ViewEncoding::new(12, 0.0).is_err());
        assert!(ViewEncoding::new(0, 0.3).is_err());
        let mut e = ViewEncoding::new(3, 0.3).unwrap();
        e.centers = vec![0.0, 0.5, 0.5];
        assert!(e.validate().is_err());
    }
}
