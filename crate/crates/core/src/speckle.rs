//! Multiplicative speckle simulation `I_s = I·S` with unit-mean `S`, and the
//! additive-equivalent noise `N = I_s − I = I·(S − 1)`.
//!
//! Randomness comes from ChaCha8 seeded from the 64-bit seed in
//! [`SpeckleParams`], so a given (image, params) pair always produces the same
//! speckle.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::wavelet::{Decomposition, Orientation, SubbandId};
use crate::{stats, Error, Raster, Result};

/// Normal-consistency constant of the median absolute deviation.
pub const MAD_SCALE: f64 = 0.6745;

/// Distribution family of the unit-mean speckle `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SpeckleFamily {
    /// Amplitude speckle: Rayleigh with scale `sqrt(2/pi)`.
    RayleighAmplitude,
    /// Single-look intensity speckle: exponential with rate 1.
    ExponentialIntensity,
    /// Multilook intensity speckle: gamma with shape `L`, scale `1/L`.
    GammaMultilook,
}

impl SpeckleFamily {
    pub const NAMES: [&'static str; 3] = ["rayleigh-amplitude", "exponential-intensity", "gamma-multilook"];

    pub fn name(self) -> &'static str {
        match self {
            SpeckleFamily::RayleighAmplitude => Self::NAMES[0],
            SpeckleFamily::ExponentialIntensity => Self::NAMES[1],
            SpeckleFamily::GammaMultilook => Self::NAMES[2],
        }
    }
}

impl fmt::Display for SpeckleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpeckleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rayleigh-amplitude" | "rayleigh" => Ok(SpeckleFamily::RayleighAmplitude),
            "exponential-intensity" | "exponential" => Ok(SpeckleFamily::ExponentialIntensity),
            "gamma-multilook" | "gamma" => Ok(SpeckleFamily::GammaMultilook),
            other => Err(Error::InvalidParameter(format!(
                "unknown speckle family '{other}' (expected one of {})",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeckleParams {
    pub family: SpeckleFamily,
    /// Number of looks; only read by [`SpeckleFamily::GammaMultilook`].
    pub looks: u32,
    pub seed: u64,
}

impl SpeckleParams {
    pub fn new(family: SpeckleFamily, looks: u32, seed: u64) -> Result<Self> {
        let p = Self { family, looks, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.looks == 0 {
            return Err(Error::InvalidParameter("looks must be at least 1".into()));
        }
        Ok(())
    }

    /// Theoretical `Var[S]`, i.e. `σ_T²` of the zero-mean process `T = S − 1`.
    pub fn variance(&self) -> f64 {
        match self.family {
            SpeckleFamily::RayleighAmplitude => 4.0 / core::f64::consts::PI - 1.0,
            SpeckleFamily::ExponentialIntensity => 1.0,
            SpeckleFamily::GammaMultilook => 1.0 / self.looks as f64,
        }
    }

    fn sampler(&self) -> Result<UnitSpeckle> {
        self.validate()?;
        Ok(match self.family {
            SpeckleFamily::RayleighAmplitude => UnitSpeckle::Rayleigh,
            SpeckleFamily::ExponentialIntensity => UnitSpeckle::Exponential,
            SpeckleFamily::GammaMultilook => {
                let l = self.looks as f64;
                UnitSpeckle::Gamma(
                    Gamma::new(l, 1.0 / l).map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?,
                )
            }
        })
    }
}

enum UnitSpeckle {
    Rayleigh,
    Exponential,
    Gamma(Gamma<f64>),
}

impl UnitSpeckle {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            // Inverse CDF on (0, 1]; 1 - U avoids ln(0).
            UnitSpeckle::Rayleigh => {
                let u = 1.0 - rng.random::<f64>();
                let sigma = libm::sqrt(2.0 / core::f64::consts::PI);
                sigma * libm::sqrt(-2.0 * libm::log(u))
            }
            UnitSpeckle::Exponential => -libm::log(1.0 - rng.random::<f64>()),
            UnitSpeckle::Gamma(g) => g.sample(rng),
        }
    }
}

/// Draws `count` i.i.d. unit-mean speckle values.
pub fn sample_speckle(params: &SpeckleParams, count: usize) -> Result<Vec<f64>> {
    let sampler = params.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// Multiplies every pixel by an independent unit-mean speckle draw.
///
/// The product is formed as `I + I·(S − 1)`, the additive-equivalent form, so
/// that `I + additive_noise(I, I_s)` reproduces `I_s` bit-exactly whenever `I`
/// is integer-valued.
pub fn simulate_speckle(clean: &Raster, params: &SpeckleParams) -> Result<Raster> {
    if let Some((index, &value)) = clean.samples().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeSample { index, value });
    }
    let s = sample_speckle(params, clean.len())?;
    Raster::new(
        clean.width(),
        clean.height(),
        clean.samples().iter().zip(s).map(|(i, s)| i + i * (s - 1.0)).collect(),
    )
}

/// `N = I_s − I`, the additive-equivalent speckle term.
pub fn additive_noise(clean: &Raster, speckled: &Raster) -> Result<Raster> {
    clean.ensure_same_shape(speckled, "additive_noise")?;
    Raster::new(
        clean.width(),
        clean.height(),
        speckled.samples().iter().zip(clean.samples()).map(|(s, i)| s - i).collect(),
    )
}

/// Robust wavelet-domain noise scale: `median(|HH_1|) / 0.6745`.
pub fn estimate_sigma_n(decomposition: &Decomposition) -> Result<f64> {
    let hh = decomposition
        .detail(SubbandId::new(1, Orientation::HH))
        .ok_or_else(|| Error::Empty("decomposition has no HH1 subband".into()))?;
    let abs: Vec<f64> = hh.samples().iter().map(|v| v.abs()).collect();
    let med = stats::median(&abs).ok_or_else(|| Error::Empty("HH1 subband is empty".into()))?;
    Ok(med / MAD_SCALE)
}
