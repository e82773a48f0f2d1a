//! Run settings: a TOML file overlaid by command-line flags.
//!
//! Every key is optional in the file; missing keys take the defaults below.
//! A flag given on the command line always wins over the file.
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//! snr_mode = "candidate-variance"
//! filters = ["visushrink-soft", "bayesshrink", "lee"]
//!
//! [filter]
//! levels = 1
//! window = 5
//! damping = 1.0
//! wavelet = "haar"
//! homomorphic = true
//!
//! [speckle]
//! family = "exponential-intensity"
//! looks = 1
//!
//! [training]
//! patch = 3
//! hidden = 16
//! mu = 0.001
//! epochs = 30
//! patience = 5
//! reference = "clean"
//! max_halvings = 4
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use nshrink_core::metrics::SnrMode;
use nshrink_core::neural::{Reference, TrainingConfig, DEFAULT_HIDDEN, DEFAULT_PATCH};
use nshrink_core::spatial::{NoiseCv, SpatialFilter, SpatialKind, WindowSpec};
use nshrink_core::speckle::{SpeckleFamily, SpeckleParams};
use nshrink_core::wavelet::{daubechies2_filters, haar_filters, WaveletFilterPair};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A problem with the invocation or configuration, as opposed to a failure
/// while processing data. Reported with exit status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    #[default]
    Haar,
    Db2,
}

impl WaveletKind {
    pub fn filters(self) -> WaveletFilterPair {
        match self {
            WaveletKind::Haar => haar_filters(),
            WaveletKind::Db2 => daubechies2_filters(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::Db2 => "db2",
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "haar" => Ok(WaveletKind::Haar),
            "db2" => Ok(WaveletKind::Db2),
            _ => Err(format!("unknown wavelet '{s}'; valid: haar, db2")),
        }
    }
}

pub fn snr_mode_name(mode: SnrMode) -> &'static str {
    match mode {
        SnrMode::CandidateVariance => "candidate-variance",
        SnrMode::ReferenceVariance => "reference-variance",
    }
}

pub fn parse_snr_mode(s: &str) -> Result<SnrMode, String> {
    match s {
        "candidate-variance" => Ok(SnrMode::CandidateVariance),
        "reference-variance" => Ok(SnrMode::ReferenceVariance),
        _ => Err(format!("unknown SNR mode '{s}'; valid: candidate-variance, reference-variance")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub levels: usize,
    pub window: usize,
    pub damping: f64,
    pub wavelet: WaveletKind,
    pub homomorphic: bool,
    /// Known look count for the Lee/Kuan family when filtering in the linear
    /// domain; estimated from the image when absent.
    pub noise_looks: Option<u32>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { levels: 1, window: 5, damping: 1.0, wavelet: WaveletKind::Haar, homomorphic: true, noise_looks: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeckleSection {
    pub family: String,
    pub looks: u32,
}

impl Default for SpeckleSection {
    fn default() -> Self {
        Self { family: SpeckleFamily::ExponentialIntensity.name().into(), looks: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub patch: usize,
    pub hidden: usize,
    pub mu: f64,
    pub epochs: usize,
    pub patience: usize,
    pub reference: String,
    /// How many times a diverging run is restarted with half the learning rate.
    pub max_halvings: u32,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainingConfig::default();
        Self {
            patch: DEFAULT_PATCH,
            hidden: DEFAULT_HIDDEN,
            mu: d.mu,
            epochs: d.epochs,
            patience: d.patience,
            reference: d.reference.name().into(),
            max_halvings: 4,
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub snr_mode: String,
    pub filters: Vec<String>,
    pub filter: FilterSection,
    pub speckle: SpeckleSection,
    pub training: TrainingSection,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("."),
            snr_mode: snr_mode_name(SnrMode::default()).into(),
            filters: Vec::new(),
            filter: FilterSection::default(),
            speckle: SpeckleSection::default(),
            training: TrainingSection::default(),
        }
    }
}

/// Flags shared by every command. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Master seed for speckle simulation, initialisation and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Decomposition depth for wavelet filters.
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    /// Odd window side for spatial filters.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Frost damping factor.
    #[arg(long, global = true)]
    pub damping: Option<f64>,
    /// Wavelet: haar or db2.
    #[arg(long, global = true)]
    pub wavelet: Option<WaveletKind>,
    /// Run spatial filters in the log domain (true/false).
    #[arg(long, global = true)]
    pub homomorphic: Option<bool>,
    /// Known look count for the Lee/Kuan family (linear-domain filtering only).
    #[arg(long, global = true)]
    pub noise_looks: Option<u32>,
    /// Speckle family: rayleigh-amplitude, exponential-intensity or gamma-multilook.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Number of looks for gamma speckle.
    #[arg(long, global = true)]
    pub looks: Option<u32>,
    /// SNR numerator: candidate-variance or reference-variance.
    #[arg(long, global = true)]
    pub snr_mode: Option<String>,
    #[arg(long, global = true)]
    pub patch: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    /// Learning rate.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Training targets: clean or noisy-pair.
    #[arg(long, global = true)]
    pub reference: Option<String>,
    /// Comma-separated filter list for bench.
    #[arg(long, global = true, value_delimiter = ',')]
    pub filters: Option<Vec<String>>,
}

impl Settings {
    pub fn from_toml(text: &str, origin: &Path) -> anyhow::Result<Settings> {
        toml::from_str(text).map_err(|e| usage(format!("{}: {e}", origin.display())))
    }

    /// Reads the config file named in `ov` (if any) and applies the flags.
    pub fn resolve(ov: &Overrides) -> anyhow::Result<Settings> {
        let mut s = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                Settings::from_toml(&text, path)?
            }
            None => Settings::default(),
        };
        s.apply(ov);
        s.validate()?;
        Ok(s)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut self.seed, &ov.seed);
        set(&mut self.out_dir, &ov.out_dir);
        set(&mut self.snr_mode, &ov.snr_mode);
        set(&mut self.filters, &ov.filters);
        set(&mut self.filter.levels, &ov.levels);
        set(&mut self.filter.window, &ov.window);
        set(&mut self.filter.damping, &ov.damping);
        set(&mut self.filter.wavelet, &ov.wavelet);
        set(&mut self.filter.homomorphic, &ov.homomorphic);
        if ov.noise_looks.is_some() {
            self.filter.noise_looks = ov.noise_looks;
        }
        set(&mut self.speckle.family, &ov.family);
        set(&mut self.speckle.looks, &ov.looks);
        set(&mut self.training.patch, &ov.patch);
        set(&mut self.training.hidden, &ov.hidden);
        set(&mut self.training.mu, &ov.mu);
        set(&mut self.training.epochs, &ov.epochs);
        set(&mut self.training.patience, &ov.patience);
        set(&mut self.training.reference, &ov.reference);
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.filter.levels == 0 {
            return Err(usage("levels must be at least 1"));
        }
        self.window()?;
        self.snr_mode()?;
        self.speckle_params(0)?;
        self.training_config()?;
        let t = &self.training;
        if t.patch.is_multiple_of(2) || t.hidden <= t.patch * t.patch {
            return Err(usage(format!(
                "patch must be odd and hidden must exceed patch² (got patch={}, hidden={})",
                t.patch, t.hidden
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> anyhow::Result<WindowSpec> {
        WindowSpec::new(self.filter.window, self.filter.damping).map_err(|e| usage(e.to_string()))
    }

    pub fn snr_mode(&self) -> anyhow::Result<SnrMode> {
        parse_snr_mode(&self.snr_mode).map_err(usage)
    }

    pub fn speckle_params(&self, seed: u64) -> anyhow::Result<SpeckleParams> {
        let family: SpeckleFamily = self.speckle.family.parse().map_err(|e| usage(format!("{e}")))?;
        SpeckleParams::new(family, self.speckle.looks, seed).map_err(|e| usage(e.to_string()))
    }

    pub fn training_config(&self) -> anyhow::Result<TrainingConfig> {
        let t = &self.training;
        let reference: Reference = t.reference.parse().map_err(|e| usage(format!("{e}")))?;
        let cfg = TrainingConfig { mu: t.mu, epochs: t.epochs, reference, shuffle_seed: self.shuffle_seed(), patience: t.patience };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn spatial_filter(&self, kind: SpatialKind) -> anyhow::Result<SpatialFilter> {
        let mut f = SpatialFilter::new(kind, self.window()?);
        f.homomorphic = self.filter.homomorphic;
        // 1/sqrt(L) describes linear-domain speckle; in the log domain the
        // level is always estimated from the image the filter sees.
        match self.filter.noise_looks {
            Some(l) if !f.homomorphic => f.noise_cv = NoiseCv::from_looks(l),
            Some(_) => log::warn!("noise_looks ignored: homomorphic filtering estimates the noise level in the log domain"),
            None => {}
        }
        Ok(f)
    }

    /// Seed of the speckle realisation applied to training image `index`.
    pub fn training_speckle_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(INIT_SEED_OFFSET)
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(SHUFFLE_SEED_OFFSET)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    /// SHA-256 of the resolved settings in canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub const INIT_SEED_OFFSET: u64 = 0x1000;
pub const SHUFFLE_SEED_OFFSET: u64 = 0x2000;
