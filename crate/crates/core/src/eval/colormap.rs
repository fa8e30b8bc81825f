//! Viridis colour map and absolute-error maps.

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Viridis sampled at 17 evenly spaced stops (0, 1/16, …, 1).
pub const VIRIDIS: [[f64; 3]; 17] = [
    [0.267004, 0.004874, 0.329415],
    [0.282327, 0.094955, 0.417331],
    [0.278826, 0.175490, 0.483397],
    [0.258965, 0.251537, 0.524736],
    [0.229739, 0.322361, 0.545706],
    [0.199430, 0.387607, 0.554642],
    [0.172719, 0.448791, 0.557885],
    [0.149039, 0.508051, 0.557250],
    [0.127568, 0.566949, 0.550556],
    [0.120638, 0.625828, 0.533488],
    [0.157851, 0.683765, 0.501686],
    [0.246070, 0.738910, 0.452024],
    [0.369214, 0.788888, 0.382914],
    [0.515992, 0.831158, 0.294279],
    [0.678489, 0.863742, 0.189503],
    [0.845561, 0.887322, 0.099702],
    [0.993248, 0.906157, 0.143936],
];

/// Piecewise-linear lookup; `t` is clamped to `[0, 1]`.
pub fn viridis(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let s = t * 16.0;
    let i = (s.floor() as usize).min(15);
    let f = s - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f)
}

/// Per-pixel mean absolute channel error, coloured with viridis over `[0, 1]`.
pub fn error_map(a: &Image, b: &Image) -> Result<Image> {
    if !a.same_dims(b) {
        return Err(Error::validation(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(Image {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(p, q)| viridis((0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>() / 3.0))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_points() {
        assert_eq!(viridis(0.0), VIRIDIS[0]);
        assert_eq!(viridis(0.5), [0.127568, 0.566949, 0.550556]);
        assert_eq!(viridis(1.0), [0.993248, 0.906157, 0.143936]);
        assert_eq!(viridis(-3.0), VIRIDIS[0]);
        assert_eq!(viridis(7.0), VIRIDIS[16]);
    }

    #[test]
    fn identical_images_give_uniform_zero_colour() {
        let a = Image::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.3]);
        let m = error_map(&a, &a).unwrap();
        assert!(m.data.iter().all(|&c| c == VIRIDIS[0]));
    }

    #[test]
    fn checker_vs_inverse_alternates_max_colour() {
        let c = |x: u32, y: u32| if (x + y) % 2 == 0 { [1.0; 3] } else { [0.0; 3] };
        let a = Image::from_fn(6, 6, c);
        let b = Image::from_fn(6, 6, |x, y| c(x + 1, y));
        let m = error_map(&a, &b).unwrap();
        assert!(m.data.iter().all(|&p| p == VIRIDIS[16]));
        assert!(error_map(&a, &Image::new(3, 6, [0.0; 3])).is_err());
    }
}
