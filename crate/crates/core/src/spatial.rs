//! Local-statistics despeckling filters (median, Lee, Kuan, Frost, enhanced
//! Lee/Frost, local Wiener) and the homomorphic log/exp wrapper.
//!
//! Windows are square with an odd side; pixels outside the image replicate
//! the nearest border pixel. Local means are accumulated relative to the
//! window's centre pixel so that constant neighbourhoods reproduce the centre
//! value exactly.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Raster, Result};

/// Side of the tiles scanned when estimating the noise coefficient of variation.
pub const NOISE_TILE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowSpec {
    size: usize,
    damping: f64,
}

impl WindowSpec {
    pub fn new(size: usize, damping: f64) -> Result<Self> {
        if size < 3 || size.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("window size must be odd and >= 3, got {size}")));
        }
        if !(damping > 0.0) || !damping.is_finite() {
            return Err(Error::InvalidParameter(format!("damping must be positive, got {damping}")));
        }
        Ok(Self { size, damping })
    }

    /// `size x size` window with damping 1.
    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, 1.0)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    fn radius(&self) -> isize {
        (self.size / 2) as isize
    }
}

/// Neighbourhood of one pixel with its centre value.
struct Window {
    center: f64,
    values: Vec<f64>,
    /// Euclidean distance of each value's position from the centre.
    distances: Vec<f64>,
}

impl Window {
    fn mean(&self) -> f64 {
        let n = self.values.len() as f64;
        self.center + self.values.iter().map(|v| v - self.center).sum::<f64>() / n
    }

    fn variance(&self, mean: f64) -> f64 {
        self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.values.len() as f64
    }

    /// `Σ w·v / Σ w`, accumulated relative to the centre.
    fn weighted_mean(&self, weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        self.center + self.values.iter().zip(weights).map(|(v, w)| w * (v - self.center)).sum::<f64>() / total
    }
}

fn distances(w: &WindowSpec) -> Vec<f64> {
    let r = w.radius();
    let mut out = Vec::with_capacity(w.size * w.size);
    for dy in -r..=r {
        for dx in -r..=r {
            out.push(libm::sqrt((dx * dx + dy * dy) as f64));
        }
    }
    out
}

/// Runs `f` on every pixel's window and collects the results.
fn filter_windows(img: &Raster, w: &WindowSpec, mut f: impl FnMut(&Window) -> f64) -> Raster {
    let r = w.radius();
    let mut win = Window { center: 0.0, values: Vec::with_capacity(w.size * w.size), distances: distances(w) };
    let mut out = Vec::with_capacity(img.len());
    for row in 0..img.height() as isize {
        for col in 0..img.width() as isize {
            win.values.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    win.values.push(img.get_clamped(row + dy, col + dx));
                }
            }
            win.center = img.get(row as usize, col as usize);
            out.push(f(&win));
        }
    }
    Raster::new(img.width(), img.height(), out).expect("spatial filters keep samples finite")
}

pub fn median_filter(img: &Raster, w: &WindowSpec) -> Raster {
    let mut scratch = Vec::with_capacity(w.size * w.size);
    filter_windows(img, w, |win| {
        scratch.clear();
        scratch.extend_from_slice(&win.values);
        scratch.sort_unstable_by(f64::total_cmp);
        scratch[scratch.len() / 2]
    })
}

/// Squared local coefficient of variation, or `None` when the local mean is 0.
fn local_cv2(mean: f64, var: f64) -> Option<f64> {
    if mean == 0.0 {
        None
    } else {
        Some(var / (mean * mean))
    }
}

fn adaptive_gain(img: &Raster, w: &WindowSpec, gain: impl Fn(f64) -> f64) -> Raster {
    filter_windows(img, w, |win| {
        let mean = win.mean();
        let var = win.variance(mean);
        match local_cv2(mean, var) {
            None => win.center,
            Some(cx2) => mean + gain(cx2) * (win.center - mean),
        }
    })
}

/// Lee filter: `mean + k·(x − mean)` with `k = max(0, 1 − C_n²/C_x²)`.
pub fn lee_filter(img: &Raster, w: &WindowSpec, noise_cv: f64) -> Raster {
    let cn2 = noise_cv * noise_cv;
    adaptive_gain(img, w, |cx2| if cx2 > 0.0 { (1.0 - cn2 / cx2).max(0.0) } else { 0.0 })
}

/// Kuan filter: gain `max(0, (1 − C_n²/C_x²)/(1 + C_n²))`.
pub fn kuan_filter(img: &Raster, w: &WindowSpec, noise_cv: f64) -> Raster {
    let cn2 = noise_cv * noise_cv;
    adaptive_gain(img, w, |cx2| if cx2 > 0.0 { ((1.0 - cn2 / cx2) / (1.0 + cn2)).max(0.0) } else { 0.0 })
}

/// Frost kernel `exp(−a·d)` over the window distances, normalised to unit sum.
pub fn frost_weights(distances: &[f64], a: f64) -> Vec<f64> {
    let mut w: Vec<f64> = distances.iter().map(|&d| libm::exp(-a * d)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Frost filter with kernel `exp(−damping·C_x²·d)`.
pub fn frost_filter(img: &Raster, w: &WindowSpec) -> Raster {
    let mut weights = Vec::new();
    filter_windows(img, w, |win| {
        let mean = win.mean();
        let var = win.variance(mean);
        match local_cv2(mean, var) {
            None => win.center,
            Some(cx2) => {
                weights = frost_weights(&win.distances, w.damping * cx2);
                win.weighted_mean(&weights)
            }
        }
    })
}

/// Heterogeneity zone of a window for the enhanced filters.
enum Zone {
    Homogeneous,
    Heterogeneous(f64),
    PointTarget,
}

fn zone(ci: f64, cu: f64, cmax: f64) -> Zone {
    if ci <= cu {
        Zone::Homogeneous
    } else if ci >= cmax {
        Zone::PointTarget
    } else {
        Zone::Heterogeneous((ci - cu) / (cmax - ci))
    }
}

/// `C_max = sqrt(1 + 2/L)` with `1/L = C_n²`.
fn cmax_for(noise_cv: f64) -> f64 {
    libm::sqrt(1.0 + 2.0 * noise_cv * noise_cv)
}

/// Enhanced Lee: local mean in homogeneous zones, the pixel itself above
/// `C_max`, and `mean·W + x·(1 − W)` with `W = exp(−damping·(C_i − C_u)/(C_max − C_i))`
/// in between.
pub fn enhanced_lee_filter(img: &Raster, w: &WindowSpec, noise_cv: f64) -> Raster {
    let (cu, cmax) = (noise_cv, cmax_for(noise_cv));
    filter_windows(img, w, |win| {
        let mean = win.mean();
        let var = win.variance(mean);
        let Some(cx2) = local_cv2(mean, var) else { return win.center };
        match zone(libm::sqrt(cx2), cu, cmax) {
            Zone::Homogeneous => mean,
            Zone::PointTarget => win.center,
            Zone::Heterogeneous(r) => {
                let wt = libm::exp(-w.damping * r);
                win.center + wt * (mean - win.center)
            }
        }
    })
}

/// Enhanced Frost: same zones as enhanced Lee, with the Frost kernel
/// `exp(−damping·(C_i − C_u)/(C_max − C_i)·d)` in the heterogeneous zone.
pub fn enhanced_frost_filter(img: &Raster, w: &WindowSpec, noise_cv: f64) -> Raster {
    let (cu, cmax) = (noise_cv, cmax_for(noise_cv));
    filter_windows(img, w, |win| {
        let mean = win.mean();
        let var = win.variance(mean);
        let Some(cx2) = local_cv2(mean, var) else { return win.center };
        match zone(libm::sqrt(cx2), cu, cmax) {
            Zone::Homogeneous => mean,
            Zone::PointTarget => win.center,
            Zone::Heterogeneous(r) => win.weighted_mean(&frost_weights(&win.distances, w.damping * r)),
        }
    })
}

/// Local Wiener filter: `mean + max(0, var − ν)/max(var, ν)·(x − mean)`,
/// `ν` the image average of the local variances.
pub fn wiener_filter(img: &Raster, w: &WindowSpec) -> Raster {
    let mut means = Vec::with_capacity(img.len());
    let mut vars = Vec::with_capacity(img.len());
    filter_windows(img, w, |win| {
        let m = win.mean();
        means.push(m);
        vars.push(win.variance(m));
        0.0
    });
    let nu = vars.iter().sum::<f64>() / vars.len() as f64;
    wiener_with_noise(img, &means, &vars, nu)
}

fn wiener_with_noise(img: &Raster, means: &[f64], vars: &[f64], nu: f64) -> Raster {
    let out = img
        .samples()
        .iter()
        .zip(means.iter().zip(vars))
        .map(|(&x, (&m, &v))| {
            let denom = v.max(nu);
            if denom == 0.0 {
                m
            } else {
                m + (v - nu).max(0.0) / denom * (x - m)
            }
        })
        .collect();
    Raster::new(img.width(), img.height(), out).expect("finite wiener output")
}

/// Noise coefficient of variation from the most homogeneous tile: the lowest
/// `std/mean` over non-overlapping `25x25` tiles with positive mean. Images
/// smaller than one tile are treated as a single tile. Returns 0 when no
/// tile has a positive mean.
pub fn estimate_noise_cv(img: &Raster) -> f64 {
    let th = NOISE_TILE.min(img.height());
    let tw = NOISE_TILE.min(img.width());
    let mut best = f64::INFINITY;
    let mut tile = Vec::with_capacity(th * tw);
    for r0 in (0..=img.height() - th).step_by(th) {
        for c0 in (0..=img.width() - tw).step_by(tw) {
            tile.clear();
            for r in r0..r0 + th {
                tile.extend_from_slice(&img.samples()[r * img.width() + c0..r * img.width() + c0 + tw]);
            }
            let m = crate::stats::mean(&tile);
            if m > 0.0 {
                best = best.min(crate::stats::std_dev(&tile) / m);
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// `exp(f(ln(x + 1))) − 1`. Pixels whose log value the inner filter leaves
/// unchanged are passed through as-is.
pub fn homomorphic(img: &Raster, filter: impl FnOnce(&Raster) -> Result<Raster>) -> Result<Raster> {
    if let Some((index, &value)) = img.samples().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeSample { index, value });
    }
    let logged = img.map(libm::log1p);
    let filtered = filter(&logged)?;
    logged.ensure_same_shape(&filtered, "homomorphic inner filter")?;
    let out = img
        .samples()
        .iter()
        .zip(logged.samples().iter().zip(filtered.samples()))
        .map(|(&x, (&l, &f))| if l == f { x } else { libm::expm1(f) })
        .collect();
    Raster::new(img.width(), img.height(), out)
}

/// Named spatial filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialKind {
    Median,
    Lee,
    Kuan,
    Frost,
    EnhancedLee,
    EnhancedFrost,
    Wiener,
}

impl SpatialKind {
    pub const ALL: [SpatialKind; 7] = [
        SpatialKind::Median,
        SpatialKind::Lee,
        SpatialKind::Kuan,
        SpatialKind::Frost,
        SpatialKind::EnhancedLee,
        SpatialKind::EnhancedFrost,
        SpatialKind::Wiener,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpatialKind::Median => "median",
            SpatialKind::Lee => "lee",
            SpatialKind::Kuan => "kuan",
            SpatialKind::Frost => "frost",
            SpatialKind::EnhancedLee => "enhanced-lee",
            SpatialKind::EnhancedFrost => "enhanced-frost",
            SpatialKind::Wiener => "wiener",
        }
    }

    fn uses_noise_cv(self) -> bool {
        matches!(self, SpatialKind::Lee | SpatialKind::Kuan | SpatialKind::EnhancedLee | SpatialKind::EnhancedFrost)
    }
}

impl fmt::Display for SpatialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpatialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpatialKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown spatial filter '{s}'")))
    }
}

/// Where the Lee/Kuan/enhanced filters get `C_n` from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseCv {
    Known(f64),
    /// Estimated from the image being filtered with [`estimate_noise_cv`].
    Estimate,
}

impl NoiseCv {
    /// `C_n = 1/sqrt(L)` for `L`-look gamma speckle.
    pub fn from_looks(looks: u32) -> Self {
        NoiseCv::Known(1.0 / libm::sqrt(looks.max(1) as f64))
    }
}

/// A configured spatial filter, optionally run in the log domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialFilter {
    pub kind: SpatialKind,
    pub window: WindowSpec,
    pub noise_cv: NoiseCv,
    pub homomorphic: bool,
}

impl SpatialFilter {
    pub fn new(kind: SpatialKind, window: WindowSpec) -> Self {
        Self { kind, window, noise_cv: NoiseCv::Estimate, homomorphic: true }
    }

    /// Filters in the linear domain, ignoring the `homomorphic` flag.
    pub fn apply_linear(&self, img: &Raster) -> Raster {
        let cn = match self.noise_cv {
            NoiseCv::Known(c) => c,
            NoiseCv::Estimate if self.kind.uses_noise_cv() => estimate_noise_cv(img),
            NoiseCv::Estimate => 0.0,
        };
        let w = &self.window;
        match self.kind {
            SpatialKind::Median => median_filter(img, w),
            SpatialKind::Lee => lee_filter(img, w, cn),
            SpatialKind::Kuan => kuan_filter(img, w, cn),
            SpatialKind::Frost => frost_filter(img, w),
            SpatialKind::EnhancedLee => enhanced_lee_filter(img, w, cn),
            SpatialKind::EnhancedFrost => enhanced_frost_filter(img, w, cn),
            SpatialKind::Wiener => wiener_filter(img, w),
        }
    }

    pub fn apply(&self, img: &Raster) -> Result<Raster> {
        if self.homomorphic {
            homomorphic(img, |l| Ok(self.apply_linear(l)))
        } else {
            Ok(self.apply_linear(img))
        }
    }
}
