//! Despeckling entry points that turn a noisy image into a filtered one:
//! the DWT → shrink → IDWT procedure for classical rules and for the neural
//! shrinker, and the spatial filters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::neural::{despeckle_ns, NeuralShrinker};
use crate::shrink::{apply_shrink, ShrinkMethod};
use crate::spatial::{SpatialFilter, SpatialKind};
use crate::wavelet::{dwt2_forward, dwt2_inverse, WaveletFilterPair};
use crate::{Error, Raster, Result};

/// Name of the neural shrinkage filter in the filter vocabulary.
pub const NEURAL_NAME: &str = "neuralshrink";

/// Every filter name accepted by [`FilterName::parse`].
pub fn filter_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = ShrinkMethod::ALL.iter().map(|m| m.name()).collect();
    names.push(NEURAL_NAME);
    names.extend(SpatialKind::ALL.iter().map(|k| k.name()));
    names
}

/// A filter name resolved to its family, before parameters are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterName {
    Shrink(ShrinkMethod),
    Neural,
    Spatial(SpatialKind),
}

impl FilterName {
    pub fn parse(name: &str) -> Result<Self> {
        if name == NEURAL_NAME {
            return Ok(FilterName::Neural);
        }
        if let Ok(m) = name.parse::<ShrinkMethod>() {
            return Ok(FilterName::Shrink(m));
        }
        if let Ok(k) = name.parse::<SpatialKind>() {
            return Ok(FilterName::Spatial(k));
        }
        Err(Error::InvalidParameter(format!(
            "unknown filter '{name}'; valid filters: {}",
            filter_names().join(", ")
        )))
    }

    pub fn is_wavelet(self) -> bool {
        !matches!(self, FilterName::Spatial(_))
    }
}

/// Classical wavelet shrinkage: DWT, per-subband rule on the details, IDWT.
pub fn wavelet_shrink(img: &Raster, filters: &WaveletFilterPair, levels: usize, method: ShrinkMethod) -> Result<Raster> {
    let d = dwt2_forward(img, filters, levels)?;
    let rules = method.rules_for(&d)?;
    dwt2_inverse(&apply_shrink(&d, &rules)?, filters)
}

/// A fully configured despeckling filter.
#[derive(Debug, Clone)]
pub enum Despeckler {
    Wavelet { method: ShrinkMethod, levels: usize, filters: WaveletFilterPair },
    Neural { model: NeuralShrinker, filters: WaveletFilterPair },
    Spatial(SpatialFilter),
}

impl Despeckler {
    pub fn label(&self) -> String {
        match self {
            Despeckler::Wavelet { method, .. } => String::from(method.name()),
            Despeckler::Neural { .. } => String::from(NEURAL_NAME),
            Despeckler::Spatial(f) => format!("{}-{}", f.kind.name(), f.window.size()),
        }
    }

    /// Decomposition depth for wavelet filters.
    pub fn levels(&self) -> Option<usize> {
        match self {
            Despeckler::Wavelet { levels, .. } => Some(*levels),
            Despeckler::Neural { model, .. } => Some(model.levels()),
            Despeckler::Spatial(_) => None,
        }
    }

    pub fn apply(&self, img: &Raster) -> Result<Raster> {
        match self {
            Despeckler::Wavelet { method, levels, filters } => wavelet_shrink(img, filters, *levels, *method),
            Despeckler::Neural { model, filters } => despeckle_ns(img, model, filters, model.levels()),
            Despeckler::Spatial(f) => f.apply(img),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::WindowSpec;
    use crate::speckle::{simulate_speckle, SpeckleFamily, SpeckleParams};
    use crate::synthetic::piecewise_constant_scene;
    use crate::wavelet::haar_filters;

    #[test]
    fn identity_pipeline_round_trips() {
        let img = piecewise_constant_scene(64, 64, 4);
        for levels in 1..=3 {
            let out = wavelet_shrink(&img, &haar_filters(), levels, ShrinkMethod::Identity).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-10);
        }
    }

    #[test]
    fn visushrink_lowers_variance() {
        let clean = piecewise_constant_scene(64, 64, 5);
        let p = SpeckleParams::new(SpeckleFamily::ExponentialIntensity, 1, 6).unwrap();
        let noisy = simulate_speckle(&clean, &p).unwrap();
        let out = wavelet_shrink(&noisy, &haar_filters(), 1, ShrinkMethod::VisuHard).unwrap();
        assert!(crate::metrics::nv(&out) < crate::metrics::nv(&noisy));
    }

    #[test]
    fn names_resolve() {
        for n in filter_names() {
            FilterName::parse(n).unwrap();
        }
        assert_eq!(filter_names().len(), 16);
        let err = FilterName::parse("gamma-map").unwrap_err();
        assert!(format!("{err}").contains("visushrink-soft"));
    }

    #[test]
    fn labels() {
        let d = Despeckler::Spatial(SpatialFilter::new(SpatialKind::Lee, WindowSpec::square(5).unwrap()));
        assert_eq!(d.label(), "lee-5");
        assert_eq!(d.levels(), None);
    }
}
