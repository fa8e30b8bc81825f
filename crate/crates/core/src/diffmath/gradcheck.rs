//! Central finite-difference checks of analytic gradients.

/// Step used by the checks unless a caller needs another.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Below this magnitude errors are measured absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-3;

/// `(f(x + ε eᵢ) − f(x − ε eᵢ)) / 2ε` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let fp = f(&p);
            p[i] = x[i] - eps;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of comparing one gradient vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_rel: f64,
    /// Coordinate with the largest error.
    pub worst: usize,
    pub checked: usize,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel.is_finite() && self.max_rel < tol
    }

    /// Combine reports over several parameter groups.
    pub fn merge(self, other: CheckReport) -> CheckReport {
        let (max_rel, worst) = if other.max_rel > self.max_rel {
            (other.max_rel, self.checked + other.worst)
        } else {
            (self.max_rel, self.worst)
        };
        CheckReport {
            max_rel,
            worst,
            checked: self.checked + other.checked,
        }
    }
}

impl Default for CheckReport {
    fn default() -> Self {
        CheckReport {
            max_rel: 0.0,
            worst: 0,
            checked: 0,
        }
    }
}

pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> CheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let mut r = CheckReport {
        checked: analytic.len(),
        ..CheckReport::default()
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(*a, *n, floor);
        if e > r.max_rel || e.is_nan() {
            r.max_rel = if e.is_nan() { f64::INFINITY } else { e };
            r.worst = i;
        }
    }
    r
}

/// Finite-difference `f` at `x` and compare against `analytic`.
pub fn check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> CheckReport {
    compare(analytic, &central_difference(f, x, DEFAULT_EPS), DEFAULT_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // Central differences are exact on quadratics up to rounding.
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1];
        let x = [0.7, -1.3];
        let g = [6.0 * x[0] - x[1], -x[0] + 0.5];
        let r = check(f, &x, &g);
        assert!(r.passes(1e-9), "{r:?}");
        assert_eq!(r.checked, 2);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0].sin();
        let r = check(f, &[0.4], &[0.4f64.cos() * 1.01]);
        assert!(!r.passes(1e-4));
        let r = check(f, &[0.4], &[f64::NAN]);
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn merge_keeps_the_worst() {
        let a = compare(&[1.0, 2.0], &[1.0, 2.0], 1e-3);
        let b = compare(&[1.0, 2.0], &[1.0, 2.2], 1e-3);
        let m = a.merge(b);
        assert_eq!(m.checked, 4);
        assert_eq!(m.worst, 3);
        assert!((m.max_rel - 0.2 / 2.2).abs() < 1e-12);
    }
}
