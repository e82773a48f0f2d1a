//! Assessment metrics for despeckled images: NMV, NV, NSD, MSE, MSD, SNR,
//! tiled ENL, deflection ratio and Pratt's figure of merit.
//!
//! Means and variances divide by the pixel count `R·C`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{stats, Error, Raster, Result};

/// Pratt's scaling constant.
pub const FOM_ALPHA: f64 = 1.0 / 9.0;
/// Side of the square tiles averaged by [`enl_tiled`].
pub const ENL_TILE: usize = 25;

/// Noise mean value: the image mean.
pub fn nmv(img: &Raster) -> f64 {
    stats::mean(img.samples())
}

/// Noise variance: population variance of the image.
pub fn nv(img: &Raster) -> f64 {
    stats::variance(img.samples())
}

/// Noise standard deviation `sqrt(NV)`.
pub fn nsd(img: &Raster) -> f64 {
    libm::sqrt(nv(img))
}

fn mean_sq_diff(a: &Raster, b: &Raster, what: &str) -> Result<f64> {
    a.ensure_same_shape(b, what)?;
    Ok(a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Mean squared error against the noise-free reference.
pub fn mse(reference: &Raster, candidate: &Raster) -> Result<f64> {
    mean_sq_diff(reference, candidate, "mse")
}

/// Mean squared difference against the speckled observation.
pub fn msd(noisy: &Raster, candidate: &Raster) -> Result<f64> {
    mean_sq_diff(noisy, candidate, "msd")
}

/// Numerator convention for [`snr_db`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrMode {
    /// `10·log10(NV(candidate)/MSE)`.
    #[default]
    CandidateVariance,
    /// `10·log10(Var(reference)/MSE)`.
    ReferenceVariance,
}

/// Signal-to-noise ratio in dB. A zero MSE yields `+∞`.
pub fn snr_db(reference: &Raster, candidate: &Raster, mode: SnrMode) -> Result<f64> {
    let err = mse(reference, candidate)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let num = match mode {
        SnrMode::CandidateVariance => nv(candidate),
        SnrMode::ReferenceVariance => nv(reference),
    };
    Ok(10.0 * libm::log10(num / err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnlEstimate {
    /// Mean of the per-tile `NMV²/NV` values.
    pub enl: f64,
    /// Tiles that contributed.
    pub tiles: usize,
    /// Full tiles skipped for zero variance.
    pub skipped: usize,
}

/// Equivalent number of looks averaged over full `tile x tile` blocks.
/// Partial border tiles are discarded; zero-variance tiles are skipped.
pub fn enl_tiled(img: &Raster, tile: usize) -> Result<EnlEstimate> {
    if tile == 0 || img.width() < tile || img.height() < tile {
        return Err(Error::NoValidTile(format!(
            "{}x{} image holds no full {tile}x{tile} tile",
            img.width(),
            img.height()
        )));
    }
    let (mut sum, mut tiles, mut skipped) = (0.0, 0usize, 0usize);
    let mut block = Vec::with_capacity(tile * tile);
    for r0 in (0..img.height() / tile).map(|i| i * tile) {
        for c0 in (0..img.width() / tile).map(|i| i * tile) {
            block.clear();
            for r in r0..r0 + tile {
                block.extend_from_slice(&img.samples()[r * img.width() + c0..r * img.width() + c0 + tile]);
            }
            let m = stats::mean(&block);
            let v = stats::variance(&block);
            if v == 0.0 {
                skipped += 1;
            } else {
                sum += m * m / v;
                tiles += 1;
            }
        }
    }
    if tiles == 0 {
        return Err(Error::NoValidTile(format!("all {skipped} tiles have zero variance")));
    }
    Ok(EnlEstimate { enl: sum / tiles as f64, tiles, skipped })
}

/// Deflection ratio `(1/(R·C))·Σ (Î − NMV)/NSD`, evaluated as written.
pub fn dr(img: &Raster) -> Result<f64> {
    let m = nmv(img);
    let sd = nsd(img);
    if sd == 0.0 {
        return Err(Error::InvalidParameter("deflection ratio undefined for NSD = 0".into()));
    }
    Ok(img.samples().iter().map(|v| (v - m) / sd).sum::<f64>() / img.len() as f64)
}

/// Binary edge map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    edges: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "edge map {width}x{height} needs {} cells, got {}",
                width * height,
                edges.len()
            )));
        }
        Ok(Self { width, height, edges })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, edges: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_edge(&self, row: usize, col: usize) -> bool {
        self.edges[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, edge: bool) {
        self.edges[row * self.width + col] = edge;
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.edges
    }
}

/// Sobel gradient magnitude with replicate borders.
pub fn sobel_magnitude(img: &Raster) -> Raster {
    Raster::from_fn(img.width(), img.height(), |r, c| {
        let p = |dr: isize, dc: isize| img.get_clamped(r as isize + dr, c as isize + dc);
        let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        libm::sqrt(gx * gx + gy * gy)
    })
}

/// Edge pixels: Sobel magnitude strictly above twice its image mean.
pub fn detect_edges(img: &Raster) -> EdgeMap {
    let mag = sobel_magnitude(img);
    let threshold = 2.0 * stats::mean(mag.samples());
    EdgeMap {
        width: img.width(),
        height: img.height(),
        edges: mag.samples().iter().map(|&m| m > threshold).collect(),
    }
}

const FAR: f64 = 1e20;

/// 1-D lower-envelope squared distance transform (Felzenszwalb–Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[1] = f64::INFINITY;
            continue;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from each cell to the nearest edge cell.
/// Cells of an edge-free map get a huge sentinel distance.
pub fn squared_distance_to_edges(map: &EdgeMap) -> Vec<f64> {
    let (w, h) = (map.width, map.height);
    let mut grid: Vec<f64> = map.edges.iter().map(|&e| if e { 0.0 } else { FAR }).collect();
    let n = w.max(h);
    let (mut f, mut out, mut v, mut z) = (vec![0.0; n], vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]);
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Pratt's figure of merit
/// `(1/max(N̂, N_ideal))·Σ_i 1/(1 + α·d_i²)` over detected edge pixels.
pub fn fom(detected: &EdgeMap, ideal: &EdgeMap, alpha: f64) -> Result<f64> {
    if detected.width != ideal.width || detected.height != ideal.height {
        return Err(Error::DimensionMismatch(format!(
            "fom: {}x{} vs {}x{}",
            detected.width, detected.height, ideal.width, ideal.height
        )));
    }
    let n_ideal = ideal.count();
    if n_ideal == 0 {
        return Err(Error::Empty("ideal edge map has no edge pixels".into()));
    }
    let d2 = squared_distance_to_edges(ideal);
    let n_det = detected.count();
    let sum: f64 = detected
        .edges
        .iter()
        .zip(&d2)
        .filter(|(e, _)| **e)
        .map(|(_, d)| 1.0 / (1.0 + alpha * d))
        .sum();
    Ok(sum / n_det.max(n_ideal) as f64)
}

/// The nine assessment values for one candidate image. Values that cannot
/// be computed for the inputs at hand are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub nmv: f64,
    pub nv: f64,
    pub nsd: f64,
    /// Needs the clean reference.
    pub mse: Option<f64>,
    pub msd: f64,
    /// Needs the clean reference; `+∞` for a perfect reconstruction.
    pub snr_db: Option<f64>,
    pub enl: Option<f64>,
    pub dr: Option<f64>,
    pub fom: Option<f64>,
}

/// Computes every metric for `candidate`.
///
/// With a clean reference, FOM compares the candidate's edges against the
/// clean image's edges; without one, against the noisy observation's edges.
pub fn full_report(clean: Option<&Raster>, noisy: &Raster, candidate: &Raster, mode: SnrMode) -> Result<MetricsReport> {
    noisy.ensure_same_shape(candidate, "full_report")?;
    if let Some(c) = clean {
        c.ensure_same_shape(candidate, "full_report clean reference")?;
    }
    let detected = detect_edges(candidate);
    let ideal = detect_edges(clean.unwrap_or(noisy));
    Ok(MetricsReport {
        nmv: nmv(candidate),
        nv: nv(candidate),
        nsd: nsd(candidate),
        mse: clean.map(|c| mse(c, candidate)).transpose()?,
        msd: msd(noisy, candidate)?,
        snr_db: clean.map(|c| snr_db(c, candidate, mode)).transpose()?,
        enl: enl_tiled(candidate, ENL_TILE).ok().map(|e| e.enl),
        dr: dr(candidate).ok(),
        fom: fom(&detected, &ideal, FOM_ALPHA).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speckle::{simulate_speckle, SpeckleFamily, SpeckleParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_d2(map: &EdgeMap) -> Vec<f64> {
        let mut out = vec![];
        for r in 0..map.height() {
            for c in 0..map.width() {
                let mut best = FAR;
                for rr in 0..map.height() {
                    for cc in 0..map.width() {
                        if map.is_edge(rr, cc) {
                            let d = (r as f64 - rr as f64).powi(2) + (c as f64 - cc as f64).powi(2);
                            best = best.min(d);
                        }
                    }
                }
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn moment_examples() {
        let c = Raster::filled(3, 3, 7.0);
        assert_eq!((nmv(&c), nv(&c), nsd(&c)), (7.0, 0.0, 0.0));
        let two = Raster::new(2, 1, vec![0.0, 2.0]).unwrap();
        assert_eq!((nmv(&two), nv(&two), nsd(&two)), (1.0, 1.0, 1.0));
        assert!(dr(&two).unwrap().abs() < 1e-15);
        assert!(dr(&c).is_err());
    }

    #[test]
    fn error_examples() {
        let z = Raster::zeros(2, 1);
        let o = Raster::filled(2, 1, 1.0);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        assert_eq!(msd(&z, &o).unwrap(), 1.0);
        assert!(mse(&z, &Raster::zeros(1, 2)).is_err());
    }

    #[test]
    fn snr_examples() {
        // candidate variance 1, MSE 1
        let reference = Raster::new(2, 1, vec![1.0, 3.0]).unwrap();
        let cand = Raster::new(2, 1, vec![0.0, 2.0]).unwrap();
        assert!(snr_db(&reference, &cand, SnrMode::CandidateVariance).unwrap().abs() < 1e-12);
        // Same variance in both images: modes agree.
        assert_eq!(
            snr_db(&reference, &cand, SnrMode::CandidateVariance).unwrap(),
            snr_db(&reference, &cand, SnrMode::ReferenceVariance).unwrap()
        );
        // NV(candidate) = a² = 10, MSE = 1
        let a = 10f64.sqrt();
        let big = Raster::new(2, 1, vec![-a, a]).unwrap();
        let off = Raster::new(2, 1, vec![-a + 1.0, a - 1.0]).unwrap();
        assert!((snr_db(&off, &big, SnrMode::CandidateVariance).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(snr_db(&cand, &cand, SnrMode::ReferenceVariance).unwrap(), f64::INFINITY);
    }

    #[test]
    fn enl_examples() {
        let even = Raster::from_fn(26, 26, |r, c| if (r + c) % 2 == 0 { 5.0 } else { 15.0 });
        let tile = even.crop(25, 25).unwrap();
        let (m, v) = (nmv(&tile), nv(&tile));
        let e = enl_tiled(&even, 25).unwrap();
        assert!((e.enl - m * m / v).abs() < 1e-12);
        assert_eq!((e.tiles, e.skipped), (1, 0));

        let flat = Raster::filled(50, 50, 3.0);
        assert!(matches!(enl_tiled(&flat, 25), Err(Error::NoValidTile(_))));
        assert!(enl_tiled(&Raster::filled(24, 30, 1.0), 25).is_err());
    }

    #[test]
    fn enl_mean10_var25() {
        let vals: Vec<f64> = (0..625).map(|i| if i < 312 { 5.0 } else if i < 624 { 15.0 } else { 10.0 }).collect();
        let t = Raster::new(25, 25, vals).unwrap();
        assert!((nmv(&t) - 10.0).abs() < 1e-12);
        let expected = 100.0 / nv(&t);
        assert!((enl_tiled(&t, 25).unwrap().enl - expected).abs() < 1e-12);
        assert!((expected - 4.0).abs() < 0.01);
    }

    #[test]
    fn enl_recovers_looks() {
        let p = SpeckleParams::new(SpeckleFamily::GammaMultilook, 4, 31).unwrap();
        let img = simulate_speckle(&Raster::filled(100, 100, 100.0), &p).unwrap();
        let e = enl_tiled(&img, ENL_TILE).unwrap();
        assert_eq!((e.tiles, e.skipped), (16, 0));
        assert!((3.4..=4.6).contains(&e.enl), "{}", e.enl);
    }

    #[test]
    fn dr_is_near_zero_on_large_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let img = Raster::from_fn(242, 242, |_, _| rng.random_range(0.0..65535.0));
        assert!(dr(&img).unwrap().abs() < 1e-8);
    }

    #[test]
    fn edges_of_constant_and_step() {
        assert_eq!(detect_edges(&Raster::filled(6, 5, 3.0)).count(), 0);
        let step = Raster::from_fn(8, 6, |_, c| if c < 4 { 0.0 } else { 100.0 });
        let e = detect_edges(&step);
        assert_eq!((e.width(), e.height()), (8, 6));
        for r in 0..6 {
            for c in 0..8 {
                assert_eq!(e.is_edge(r, c), c == 3 || c == 4, "({r},{c})");
            }
        }
    }

    #[test]
    fn fom_examples() {
        let mut ideal = EdgeMap::empty(7, 7);
        ideal.set(3, 0, true);
        assert_eq!(fom(&ideal, &ideal, FOM_ALPHA).unwrap(), 1.0);
        let mut det = EdgeMap::empty(7, 7);
        det.set(3, 3, true);
        assert!((fom(&det, &ideal, FOM_ALPHA).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(fom(&EdgeMap::empty(7, 7), &ideal, FOM_ALPHA).unwrap(), 0.0);
        assert!(fom(&ideal, &EdgeMap::empty(7, 7), FOM_ALPHA).is_err());
        assert!(fom(&EdgeMap::empty(6, 7), &ideal, FOM_ALPHA).is_err());
    }

    #[test]
    fn fom_decreases_with_distance() {
        let mut ideal = EdgeMap::empty(12, 1);
        ideal.set(0, 0, true);
        let mut last = f64::INFINITY;
        for c in 0..12 {
            let mut det = EdgeMap::empty(12, 1);
            det.set(0, c, true);
            let f = fom(&det, &ideal, FOM_ALPHA).unwrap();
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn full_report_cases() {
        let img = Raster::from_fn(30, 30, |r, c| if c < 15 { 10.0 + (r % 3) as f64 } else { 90.0 + (c % 2) as f64 });
        let rep = full_report(Some(&img), &img, &img, SnrMode::CandidateVariance).unwrap();
        assert_eq!(rep.mse, Some(0.0));
        assert_eq!(rep.msd, 0.0);
        assert_eq!(rep.snr_db, Some(f64::INFINITY));
        assert_eq!(rep.fom, Some(1.0));
        let no_clean = full_report(None, &img, &img, SnrMode::CandidateVariance).unwrap();
        assert_eq!((no_clean.mse, no_clean.snr_db), (None, None));
        assert!(full_report(None, &img, &Raster::zeros(2, 2), SnrMode::CandidateVariance).is_err());
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force(w in 1usize..10, h in 1usize..10, bits in proptest::collection::vec(any::<bool>(), 100)) {
            let cells: Vec<bool> = (0..w * h).map(|i| bits[i] && bits[(i * 7 + 3) % 100]).collect();
            let map = EdgeMap::new(w, h, cells).unwrap();
            let fast = squared_distance_to_edges(&map);
            let slow = brute_d2(&map);
            if map.count() > 0 {
                prop_assert_eq!(fast, slow);
            }
        }

        #[test]
        fn fom_bounds(w in 2usize..10, h in 2usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = EdgeMap::new(w, h, (0..w * h).map(|_| rng.random_bool(0.3)).collect()).unwrap();
            let b = EdgeMap::new(w, h, (0..w * h).map(|_| rng.random_bool(0.3)).collect()).unwrap();
            if b.count() > 0 {
                let f = fom(&a, &b, FOM_ALPHA).unwrap();
                prop_assert!((0.0..=1.0).contains(&f));
                prop_assert_eq!(f == 1.0, a == b);
            }
        }

        #[test]
        fn nsd_squared_is_nv(vals in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let img = Raster::new(vals.len(), 1, vals).unwrap();
            prop_assert!((nsd(&img).powi(2) - nv(&img)).abs() <= 1e-12 * nv(&img).max(1.0));
        }
    }
}
