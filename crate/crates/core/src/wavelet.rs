//! Separable orthonormal 2-D discrete wavelet transform with periodic
//! boundary extension.
//!
//! Each level filters the rows and then the columns of the current
//! approximation with the lowpass/highpass pair and keeps every second
//! sample. Subband names give the row filter first and the column filter
//! second, so `LH` is lowpass along rows and highpass along columns.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Raster, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Quadrature mirror filter pair: lowpass `h` and highpass `g` with
/// `g[k] = (-1)^k h[len-1-k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletFilterPair {
    /// Builds the pair from the scaling filter, deriving the wavelet filter by
    /// the quadrature mirror relation. The scaling filter must have even
    /// length, unit energy and sum to `sqrt(2)`.
    pub fn from_lowpass(lowpass: Vec<f64>) -> Result<Self> {
        if lowpass.is_empty() || !lowpass.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "scaling filter needs a positive even length, got {}",
                lowpass.len()
            )));
        }
        let energy: f64 = lowpass.iter().map(|v| v * v).sum();
        let sum: f64 = lowpass.iter().sum();
        if (energy - 1.0).abs() > NORMALIZATION_TOL
            || (sum - core::f64::consts::SQRT_2).abs() > NORMALIZATION_TOL
        {
            return Err(Error::InvalidParameter(format!(
                "scaling filter is not orthonormal (sum of squares {energy}, sum {sum})"
            )));
        }
        let n = lowpass.len();
        let highpass = (0..n)
            .map(|k| if k % 2 == 0 { lowpass[n - 1 - k] } else { -lowpass[n - 1 - k] })
            .collect();
        Ok(Self { lowpass, highpass })
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }
}

/// Haar (Daubechies 1) filters: `h = [1/√2, 1/√2]`, `g = [1/√2, −1/√2]`.
pub fn haar_filters() -> WaveletFilterPair {
    let a = core::f64::consts::FRAC_1_SQRT_2;
    WaveletFilterPair { lowpass: vec![a, a], highpass: vec![a, -a] }
}

/// Four-tap Daubechies filters.
pub fn daubechies2_filters() -> WaveletFilterPair {
    let s3 = libm::sqrt(3.0);
    let d = 4.0 * core::f64::consts::SQRT_2;
    WaveletFilterPair::from_lowpass(vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d])
        .expect("db2 taps are orthonormal")
}

/// Detail orientation within one decomposition level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Orientation {
    LH,
    HL,
    HH,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::LH, Orientation::HL, Orientation::HH];

    pub fn index(self) -> usize {
        match self {
            Orientation::LH => 0,
            Orientation::HL => 1,
            Orientation::HH => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Orientation::LH => "LH",
            Orientation::HL => "HL",
            Orientation::HH => "HH",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identifies one detail subband: level `j` (1 = finest) and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubbandId {
    pub level: usize,
    pub orientation: Orientation,
}

impl SubbandId {
    pub fn new(level: usize, orientation: Orientation) -> Self {
        Self { level, orientation }
    }
}

impl fmt::Display for SubbandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.orientation, self.level)
    }
}

/// The three detail subbands of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailLevel {
    pub lh: Raster,
    pub hl: Raster,
    pub hh: Raster,
}

impl DetailLevel {
    pub fn get(&self, orientation: Orientation) -> &Raster {
        match orientation {
            Orientation::LH => &self.lh,
            Orientation::HL => &self.hl,
            Orientation::HH => &self.hh,
        }
    }

    pub fn get_mut(&mut self, orientation: Orientation) -> &mut Raster {
        match orientation {
            Orientation::LH => &mut self.lh,
            Orientation::HL => &mut self.hl,
            Orientation::HH => &mut self.hh,
        }
    }
}

/// Multi-level 2-D DWT: the coarsest approximation `LL_J` plus the detail
/// subbands of every level, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    approx: Raster,
    details: Vec<DetailLevel>,
    rows: usize,
    cols: usize,
}

impl Decomposition {
    /// Assembles a decomposition, checking that every subband at level `j`
    /// measures `rows/2^j x cols/2^j`.
    pub fn new(approx: Raster, details: Vec<DetailLevel>, rows: usize, cols: usize) -> Result<Self> {
        let levels = details.len();
        if levels == 0 {
            return Err(Error::InvalidParameter("decomposition needs at least one level".into()));
        }
        check_divisible(rows, cols, levels)?;
        for (i, level) in details.iter().enumerate() {
            let (h, w) = (rows >> (i + 1), cols >> (i + 1));
            for o in Orientation::ALL {
                let band = level.get(o);
                if band.height() != h || band.width() != w {
                    return Err(Error::DimensionMismatch(format!(
                        "{o}{} is {}x{}, expected {w}x{h}",
                        i + 1,
                        band.width(),
                        band.height()
                    )));
                }
            }
        }
        let (h, w) = (rows >> levels, cols >> levels);
        if approx.height() != h || approx.width() != w {
            return Err(Error::DimensionMismatch(format!(
                "LL{levels} is {}x{}, expected {w}x{h}",
                approx.width(),
                approx.height()
            )));
        }
        Ok(Self { approx, details, rows, cols })
    }

    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn approx(&self) -> &Raster {
        &self.approx
    }

    pub fn approx_mut(&mut self) -> &mut Raster {
        &mut self.approx
    }

    pub fn details(&self) -> &[DetailLevel] {
        &self.details
    }

    pub fn detail(&self, id: SubbandId) -> Option<&Raster> {
        self.details.get(id.level.checked_sub(1)?).map(|l| l.get(id.orientation))
    }

    pub fn detail_mut(&mut self, id: SubbandId) -> Option<&mut Raster> {
        self.details.get_mut(id.level.checked_sub(1)?).map(|l| l.get_mut(id.orientation))
    }

    /// Every detail subband id, level by level, in LH/HL/HH order.
    pub fn subband_ids(&self) -> Vec<SubbandId> {
        subband_ids(self.levels())
    }

    /// Sum of squared coefficients over all subbands.
    pub fn energy(&self) -> f64 {
        self.approx.energy()
            + self
                .details
                .iter()
                .map(|l| l.lh.energy() + l.hl.energy() + l.hh.energy())
                .sum::<f64>()
    }
}

/// Detail subband ids for a `levels`-deep decomposition.
pub fn subband_ids(levels: usize) -> Vec<SubbandId> {
    (1..=levels)
        .flat_map(|j| Orientation::ALL.into_iter().map(move |o| SubbandId::new(j, o)))
        .collect()
}

fn check_divisible(rows: usize, cols: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidParameter("wavelet levels must be at least 1".into()));
    }
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || !rows.is_multiple_of(block) || !cols.is_multiple_of(block) || rows < block || cols < block {
        return Err(Error::DimensionMismatch(format!(
            "{cols}x{rows} image is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

/// Largest `(width, height)` not exceeding the input that is divisible by `2^levels`.
pub fn valid_dimensions(width: usize, height: usize, levels: usize) -> (usize, usize) {
    let block = 1usize << levels;
    (width / block * block, height / block * block)
}

/// One periodic analysis step: `low[k] = Σ h[m] x[(2k+m) mod n]`.
fn analyze(input: &[f64], filters: &WaveletFilterPair, low: &mut [f64], high: &mut [f64]) {
    let n = input.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (m, (&h, &g)) in filters.lowpass.iter().zip(&filters.highpass).enumerate() {
            let x = input[(2 * k + m) % n];
            a += h * x;
            d += g * x;
        }
        low[k] = a;
        high[k] = d;
    }
}

/// Transpose of [`analyze`]; its exact inverse for orthonormal filters.
fn synthesize(low: &[f64], high: &[f64], filters: &WaveletFilterPair, output: &mut [f64]) {
    let n = output.len();
    output.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..n / 2 {
        for (m, (&h, &g)) in filters.lowpass.iter().zip(&filters.highpass).enumerate() {
            output[(2 * k + m) % n] += h * low[k] + g * high[k];
        }
    }
}

fn forward_level(image: &Raster, filters: &WaveletFilterPair) -> (Raster, DetailLevel) {
    let (w, h) = (image.width(), image.height());
    let (hw, hh) = (w / 2, h / 2);
    // Row pass: row-lowpass in the left half, row-highpass in the right half.
    let mut rows = vec![0.0; w * h];
    for r in 0..h {
        let src = &image.samples()[r * w..(r + 1) * w];
        let (low, high) = rows[r * w..(r + 1) * w].split_at_mut(hw);
        analyze(src, filters, low, high);
    }
    let mut column = vec![0.0; h];
    let mut low = vec![0.0; hh];
    let mut high = vec![0.0; hh];
    let mut ll = vec![0.0; hw * hh];
    let mut lh = vec![0.0; hw * hh];
    let mut hl = vec![0.0; hw * hh];
    let mut hhb = vec![0.0; hw * hh];
    for c in 0..w {
        for r in 0..h {
            column[r] = rows[r * w + c];
        }
        analyze(&column, filters, &mut low, &mut high);
        let (top, bottom, cc) = if c < hw { (&mut ll, &mut lh, c) } else { (&mut hl, &mut hhb, c - hw) };
        for r in 0..hh {
            top[r * hw + cc] = low[r];
            bottom[r * hw + cc] = high[r];
        }
    }
    let band = |s| Raster::new(hw, hh, s).expect("finite coefficients");
    (band(ll), DetailLevel { lh: band(lh), hl: band(hl), hh: band(hhb) })
}

fn inverse_level(approx: &Raster, level: &DetailLevel, filters: &WaveletFilterPair) -> Raster {
    let (hw, hh) = (approx.width(), approx.height());
    let (w, h) = (hw * 2, hh * 2);
    let mut rows = vec![0.0; w * h];
    let mut low = vec![0.0; hh];
    let mut high = vec![0.0; hh];
    let mut column = vec![0.0; h];
    for c in 0..w {
        let (top, bottom, cc) = if c < hw { (approx, &level.lh, c) } else { (&level.hl, &level.hh, c - hw) };
        for r in 0..hh {
            low[r] = top.get(r, cc);
            high[r] = bottom.get(r, cc);
        }
        synthesize(&low, &high, filters, &mut column);
        for r in 0..h {
            rows[r * w + c] = column[r];
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        let (low, high) = rows[r * w..(r + 1) * w].split_at(hw);
        synthesize(low, high, filters, &mut out[r * w..(r + 1) * w]);
    }
    Raster::new(w, h, out).expect("finite reconstruction")
}

/// Forward transform with `levels` decomposition levels. Image dimensions
/// must be divisible by `2^levels`.
pub fn dwt2_forward(image: &Raster, filters: &WaveletFilterPair, levels: usize) -> Result<Decomposition> {
    check_divisible(image.height(), image.width(), levels)?;
    let mut approx = image.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (ll, detail) = forward_level(&approx, filters);
        details.push(detail);
        approx = ll;
    }
    Ok(Decomposition { approx, details, rows: image.height(), cols: image.width() })
}

/// Inverse transform; exact inverse of [`dwt2_forward`] for orthonormal filters.
pub fn dwt2_inverse(decomposition: &Decomposition, filters: &WaveletFilterPair) -> Result<Raster> {
    // Revalidate: subbands may have been replaced through `detail_mut`.
    let d = Decomposition::new(
        decomposition.approx.clone(),
        decomposition.details.clone(),
        decomposition.rows,
        decomposition.cols,
    )?;
    let mut approx = d.approx;
    for level in d.details.iter().rev() {
        approx = inverse_level(&approx, level, filters);
    }
    Ok(approx)
}
