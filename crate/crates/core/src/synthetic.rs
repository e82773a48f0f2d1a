//! Seeded synthetic scenes for training and benchmarking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Raster;

/// Piecewise-constant scene: a flat background with rectangles and one disc
/// of distinct intensities in `[20, 230]`, laid out from `seed`.
pub fn piecewise_constant_scene(width: usize, height: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let background = libm::round(rng.random_range(20.0..80.0f64));
    let mut shapes = [(0.0, 0.0, 0.0, 0.0, 0.0); 4];
    for s in shapes.iter_mut() {
        let x0 = rng.random_range(0.0..0.7) * w;
        let y0 = rng.random_range(0.0..0.7) * h;
        let x1 = x0 + rng.random_range(0.2..0.5) * w;
        let y1 = y0 + rng.random_range(0.2..0.5) * h;
        *s = (x0, y0, x1, y1, libm::round(rng.random_range(100.0..230.0f64)));
    }
    let (cx, cy) = (rng.random_range(0.3..0.7) * w, rng.random_range(0.3..0.7) * h);
    let radius = rng.random_range(0.1..0.2) * w.min(h);
    let disc = libm::round(rng.random_range(20.0..230.0f64));
    Raster::from_fn(width, height, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius {
            return disc;
        }
        shapes
            .iter()
            .rev()
            .find(|&&(x0, y0, x1, y1, _)| x >= x0 && x < x1 && y >= y0 && y < y1)
            .map_or(background, |s| s.4)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_piecewise() {
        let a = piecewise_constant_scene(64, 64, 1);
        assert_eq!(a, piecewise_constant_scene(64, 64, 1));
        assert_ne!(a, piecewise_constant_scene(64, 64, 2));
        let mut levels: std::vec::Vec<f64> = a.samples().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert!(levels.len() >= 2 && levels.len() <= 6);
        assert!(a.samples().iter().all(|&v| (20.0..=230.0).contains(&v) && v.fract() == 0.0));
    }
}
