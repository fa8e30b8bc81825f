//! Stage-1 objective: photometric, eikonal, mask and depth-prior terms.

use serde::{Deserialize, Serialize};

use super::render::{RayGrad, RayOutput};
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryLossWeights {
    pub rgb: f64,
    pub eikonal: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
}

impl Default for GeometryLossWeights {
    fn default() -> Self {
        GeometryLossWeights {
            rgb: 1.0,
            eikonal: 0.1,
            mask: 0.1,
            depth: 0.3,
            normal: 0.04,
        }
    }
}

impl GeometryLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rgb, self.eikonal, self.mask, self.depth, self.normal];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Supervision for one ray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayTarget {
    pub rgb: [f64; 3],
    pub mask: Option<bool>,
    /// Prior termination distance along the ray.
    pub depth: Option<f64>,
    /// Unit prior normal facing the camera.
    pub normal: Option<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub eikonal: f64,
    pub mask: f64,
    pub depth: f64,
    pub normal: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &GeometryLossWeights) -> f64 {
        w.rgb * self.rgb + w.eikonal * self.eikonal + w.mask * self.mask + w.depth * self.depth + w.normal * self.normal
    }
}

const LOG_FLOOR: f64 = 1e-6;

/// Batch losses plus per-ray upstream gradients of the weighted total.
/// Also returns the factor for per-point eikonal gradients.
pub fn geometry_losses(
    outputs: &[RayOutput],
    targets: &[RayTarget],
    eikonal_sum: f64,
    eikonal_points: usize,
    w: &GeometryLossWeights,
) -> (LossTerms, Vec<RayGrad>, f64) {
    assert_eq!(outputs.len(), targets.len());
    let n = outputs.len().max(1) as f64;
    let n_mask = targets.iter().filter(|t| t.mask.is_some()).count();
    let n_depth = targets.iter().filter(|t| t.depth.is_some()).count();
    let n_normal = targets.iter().filter(|t| t.normal.is_some()).count();
    let mut terms = LossTerms::default();
    let mut grads = vec![RayGrad::default(); outputs.len()];

    for ((o, t), g) in outputs.iter().zip(targets).zip(grads.iter_mut()) {
        for c in 0..3 {
            let r = o.rgb[c] - t.rgb[c];
            terms.rgb += r * r / (3.0 * n);
            g.rgb[c] = w.rgb * 2.0 * r / (3.0 * n);
        }
        if let Some(m) = t.mask {
            let nm = n_mask as f64;
            let (arg, sign) = if m { (o.acc, -1.0) } else { (1.0 - o.acc, 1.0) };
            terms.mask -= arg.max(LOG_FLOOR).ln() / nm;
            if arg > LOG_FLOOR {
                g.acc = w.mask * sign / arg / nm;
            }
        }
        if let Some(d) = t.depth {
            let nd = n_depth as f64;
            let r = o.depth - d;
            terms.depth += r.abs() / nd;
            g.depth = w.depth * r.signum() * (r != 0.0) as i32 as f64 / nd;
        }
        if let Some(p) = t.normal {
            let nn = n_normal as f64;
            let len = o.normal.norm();
            if len > 1e-9 {
                let cos = o.normal.dot(p) / len;
                terms.normal += (1.0 - cos) / nn;
                g.normal = -(p - o.normal * (cos / len)) * (w.normal / (len * nn));
            } else {
                terms.normal += 1.0 / nn;
            }
        }
    }
    let eik_scale = if eikonal_points > 0 {
        terms.eikonal = eikonal_sum / eikonal_points as f64;
        w.eikonal / eikonal_points as f64
    } else {
        0.0
    };
    terms.total = terms.weighted_total(w);
    (terms, grads, eik_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_give_zero() {
        let o = RayOutput {
            rgb: [0.2, 0.4, 0.6],
            depth: 2.5,
            normal: Vec3::new(0.0, 0.0, 1.0),
            acc: 1.0,
        };
        let t = RayTarget {
            rgb: [0.2, 0.4, 0.6],
            mask: Some(true),
            depth: Some(2.5),
            normal: Some(Vec3::new(0.0, 0.0, 1.0)),
        };
        let (l, _, _) = geometry_losses(&[o], &[t], 0.0, 10, &GeometryLossWeights::default());
        assert_eq!(l, LossTerms::default());
    }

    #[test]
    fn total_is_exact_weighted_sum_and_linear_in_depth_weight() {
        let o = RayOutput {
            rgb: [0.1, 0.9, 0.3],
            depth: 2.0,
            normal: Vec3::new(0.3, 0.1, 0.8),
            acc: 0.7,
        };
        let t = RayTarget {
            rgb: [0.2, 0.4, 0.6],
            mask: Some(true),
            depth: Some(2.5),
            normal: Some(Vec3::new(0.0, 0.0, 1.0)),
        };
        let w = GeometryLossWeights::default();
        let (l, _, _) = geometry_losses(&[o], &[t], 0.3, 3, &w);
        let expect = 1.0 * l.rgb + 0.1 * l.eikonal + 0.1 * l.mask + 0.3 * l.depth + 0.04 * l.normal;
        assert!((l.total - expect).abs() < 1e-12);
        let w2 = GeometryLossWeights { depth: 0.6, ..w };
        let (l2, _, _) = geometry_losses(&[o], &[t], 0.3, 3, &w2);
        assert!(((l2.total - l.total) - 0.3 * l.depth).abs() < 1e-12);
    }

    #[test]
    fn missing_priors_are_skipped() {
        let o = RayOutput::default();
        let t = RayTarget::default();
        let (l, _, _) = geometry_losses(&[o], &[t], 0.0, 0, &GeometryLossWeights::default());
        assert_eq!(l.depth, 0.0);
        assert_eq!(l.normal, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let w = GeometryLossWeights::default();
        let t = RayTarget {
            rgb: [0.2, 0.4, 0.6],
            mask: Some(false),
            depth: Some(2.5),
            normal: Some(Vec3::new(0.0, 0.6, 0.8)),
        };
        let o = RayOutput {
            rgb: [0.1, 0.9, 0.3],
            depth: 2.1,
            normal: Vec3::new(0.3, 0.1, 0.8),
            acc: 0.4,
        };
        let (_, g, _) = geometry_losses(&[o], &[t], 0.0, 0, &w);
        let f = |o: RayOutput| geometry_losses(&[o], &[t], 0.0, 0, &w).0.total;
        let h = 1e-6;
        let mut p = o;
        p.acc += h;
        let mut m = o;
        m.acc -= h;
        assert!(((f(p) - f(m)) / (2.0 * h) - g[0].acc).abs() < 1e-7);
        for a in 0..3 {
            let mut p = o;
            p.normal[a] += h;
            let mut m = o;
            m.normal[a] -= h;
            assert!(((f(p) - f(m)) / (2.0 * h) - g[0].normal[a]).abs() < 1e-7);
        }
    }
}
