//! Coefficient shrinkage rules for detail subbands: hard, soft and semisoft
//! thresholding, the closed-form linear MMSE gain, and the threshold selectors
//! (universal, BayesShrink, NormalShrink, SURE).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::speckle::estimate_sigma_n;
use crate::wavelet::{Decomposition, SubbandId};
use crate::{stats, Error, Result};

/// `0` if `|y| < t`, otherwise `y`.
#[inline]
pub fn hard_threshold(y: f64, t: f64) -> f64 {
    if y.abs() < t {
        0.0
    } else {
        y
    }
}

/// `sign(y)·max(|y| − t, 0)`.
#[inline]
pub fn soft_threshold(y: f64, t: f64) -> f64 {
    let m = y.abs() - t;
    if m > 0.0 {
        libm::copysign(m, y)
    } else {
        0.0
    }
}

/// Firm (semisoft) thresholding: zero up to `t1`, identity from `t2`, linear
/// in between.
pub fn semisoft_threshold(y: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(0.0 <= t1 && t1 < t2) {
        return Err(Error::InvalidParameter(format!("semisoft needs 0 <= t1 < t2, got t1={t1}, t2={t2}")));
    }
    Ok(semisoft_unchecked(y, t1, t2))
}

#[inline]
fn semisoft_unchecked(y: f64, t1: f64, t2: f64) -> f64 {
    let a = y.abs();
    if a <= t1 {
        0.0
    } else if a >= t2 {
        y
    } else {
        libm::copysign(t2 * (a - t1) / (t2 - t1), y)
    }
}

/// `σ_n·sqrt(2·ln M)`.
pub fn universal_threshold(count: usize, sigma_n: f64) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidParameter("universal threshold needs M >= 1".into()));
    }
    if !(sigma_n >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma_n must be >= 0, got {sigma_n}")));
    }
    Ok(sigma_n * libm::sqrt(2.0 * libm::log(count as f64)))
}

/// Noise and signal scales of one subband.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubbandStats {
    pub sigma_n: f64,
    pub sigma_y: f64,
    /// `sqrt(max(σ_y² − σ_n², 0))`.
    pub sigma_x: f64,
    pub count: usize,
}

impl SubbandStats {
    pub fn new(sigma_n: f64, sigma_y: f64, count: usize) -> Result<Self> {
        if !(sigma_n >= 0.0 && sigma_y >= 0.0) || !sigma_n.is_finite() || !sigma_y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "standard deviations must be finite and >= 0 (sigma_n={sigma_n}, sigma_y={sigma_y})"
            )));
        }
        let sigma_x = libm::sqrt((sigma_y * sigma_y - sigma_n * sigma_n).max(0.0));
        Ok(Self { sigma_n, sigma_y, sigma_x, count })
    }

    /// Stats of a coefficient set with `σ_y` its population standard deviation.
    pub fn from_coefficients(coeffs: &[f64], sigma_n: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Empty("subband has no coefficients".into()));
        }
        Self::new(sigma_n, stats::std_dev(coeffs), coeffs.len())
    }
}

/// BayesShrink threshold `σ_n²/σ_x`. Returns `+∞` (kill the subband) when
/// `σ_x = 0` and `σ_n > 0`.
pub fn bayes_threshold(stats: &SubbandStats) -> f64 {
    if stats.sigma_n == 0.0 {
        0.0
    } else if stats.sigma_x == 0.0 {
        f64::INFINITY
    } else {
        stats.sigma_n * stats.sigma_n / stats.sigma_x
    }
}

/// NormalShrink threshold `β·σ_n²/σ_y` with `β = sqrt(ln(M/J))`.
pub fn normal_threshold(stats: &SubbandStats, levels: usize) -> f64 {
    let ratio = stats.count as f64 / levels.max(1) as f64;
    let beta = if ratio > 1.0 { libm::sqrt(libm::log(ratio)) } else { 0.0 };
    if stats.sigma_n == 0.0 || beta == 0.0 {
        0.0
    } else if stats.sigma_y == 0.0 {
        f64::INFINITY
    } else {
        beta * stats.sigma_n * stats.sigma_n / stats.sigma_y
    }
}

/// Linear MMSE (equivalently Gaussian MAP) estimate `σ_x²/(σ_x² + σ_n²)·y`.
pub fn linear_mmse_shrink(y: f64, stats: &SubbandStats) -> Result<f64> {
    Ok(mmse_gain(stats)? * y)
}

fn mmse_gain(stats: &SubbandStats) -> Result<f64> {
    let sx2 = stats.sigma_x * stats.sigma_x;
    let total = sx2 + stats.sigma_n * stats.sigma_n;
    if total <= 0.0 {
        return Err(Error::InvalidParameter("linear MMSE needs sigma_x^2 + sigma_n^2 > 0".into()));
    }
    Ok(sx2 / total)
}

/// Threshold minimising Stein's unbiased risk estimate
/// `SURE(t) = M·σ² + Σ min(y², t²) − 2σ²·#{|y| ≤ t}` over `t ∈ {0} ∪ {|y_i|}`.
/// Ties go to the smaller threshold.
pub fn sure_threshold(coeffs: &[f64], sigma_n: f64) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::Empty("SURE needs at least one coefficient".into()));
    }
    if !(sigma_n > 0.0) {
        return Err(Error::InvalidParameter(format!("SURE needs sigma_n > 0, got {sigma_n}")));
    }
    let mut abs: Vec<f64> = coeffs.iter().map(|v| v.abs()).collect();
    abs.sort_unstable_by(f64::total_cmp);
    let m = abs.len();
    let var = sigma_n * sigma_n;
    let base = m as f64 * var;

    // Prefix state: `below` values (all <= t) contribute their squares.
    let mut below = 0usize;
    let mut sum_sq = 0.0;
    while below < m && abs[below] <= 0.0 {
        below += 1;
    }
    let mut best_t = 0.0;
    let mut best = base + sum_sq - 2.0 * var * below as f64;
    while below < m {
        let t = abs[below];
        while below < m && abs[below] == t {
            sum_sq += t * t;
            below += 1;
        }
        let risk = base + sum_sq + (m - below) as f64 * t * t - 2.0 * var * below as f64;
        if risk < best {
            best = risk;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// Per-coefficient shrinkage rule bound to its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShrinkRule {
    Hard { t: f64 },
    Soft { t: f64 },
    SemiSoft { t1: f64, t2: f64 },
    LinearMmse(SubbandStats),
}

impl ShrinkRule {
    /// Rule that leaves coefficients unchanged.
    pub const IDENTITY: ShrinkRule = ShrinkRule::Soft { t: 0.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShrinkRule::Hard { t } | ShrinkRule::Soft { t } => {
                if !(t >= 0.0) {
                    return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {t}")));
                }
            }
            ShrinkRule::SemiSoft { t1, t2 } => {
                semisoft_threshold(0.0, t1, t2)?;
            }
            ShrinkRule::LinearMmse(s) => {
                mmse_gain(&s)?;
            }
        }
        Ok(())
    }

    /// Applies the rule to one coefficient. The rule must be valid.
    #[inline]
    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            ShrinkRule::Hard { t } => hard_threshold(y, t),
            ShrinkRule::Soft { t } => soft_threshold(y, t),
            ShrinkRule::SemiSoft { t1, t2 } => semisoft_unchecked(y, t1, t2),
            ShrinkRule::LinearMmse(s) => {
                let sx2 = s.sigma_x * s.sigma_x;
                sx2 / (sx2 + s.sigma_n * s.sigma_n) * y
            }
        }
    }
}

/// One rule per detail subband.
pub type RuleMap = BTreeMap<SubbandId, ShrinkRule>;

/// Maps every detail coefficient through its subband's rule. The
/// approximation subband is copied unchanged.
pub fn apply_shrink(decomposition: &Decomposition, rules: &RuleMap) -> Result<Decomposition> {
    let mut out = decomposition.clone();
    for id in decomposition.subband_ids() {
        let rule = rules
            .get(&id)
            .ok_or_else(|| Error::InvalidParameter(format!("no shrink rule for subband {id}")))?;
        rule.validate()?;
        let band = out.detail_mut(id).expect("id from subband_ids");
        *band = band.try_map(|y| rule.apply(y))?;
    }
    Ok(out)
}

/// Threshold-selection schemes exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShrinkMethod {
    /// Soft thresholding at zero; the pipeline round trip.
    Identity,
    VisuHard,
    VisuSoft,
    VisuSemisoft,
    Bayes,
    Normal,
    Sure,
    LinearMmse,
}

impl ShrinkMethod {
    pub const ALL: [ShrinkMethod; 8] = [
        ShrinkMethod::Identity,
        ShrinkMethod::VisuHard,
        ShrinkMethod::VisuSoft,
        ShrinkMethod::VisuSemisoft,
        ShrinkMethod::Bayes,
        ShrinkMethod::Normal,
        ShrinkMethod::Sure,
        ShrinkMethod::LinearMmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShrinkMethod::Identity => "identity",
            ShrinkMethod::VisuHard => "visushrink-hard",
            ShrinkMethod::VisuSoft => "visushrink-soft",
            ShrinkMethod::VisuSemisoft => "visushrink-semisoft",
            ShrinkMethod::Bayes => "bayesshrink",
            ShrinkMethod::Normal => "normalshrink",
            ShrinkMethod::Sure => "sureshrink",
            ShrinkMethod::LinearMmse => "linear-mmse",
        }
    }

    /// Derives the per-subband rules, estimating `σ_n` from `HH_1`.
    ///
    /// Thresholds are computed per subband with `M` its coefficient count.
    /// Semisoft uses `t1 = T`, `t2 = 2T` around the universal threshold.
    pub fn rules_for(self, decomposition: &Decomposition) -> Result<RuleMap> {
        let sigma_n = estimate_sigma_n(decomposition)?;
        let levels = decomposition.levels();
        let mut rules = RuleMap::new();
        for id in decomposition.subband_ids() {
            let coeffs = decomposition.detail(id).expect("id from subband_ids").samples();
            let st = SubbandStats::from_coefficients(coeffs, sigma_n)?;
            let rule = match self {
                ShrinkMethod::Identity => ShrinkRule::IDENTITY,
                ShrinkMethod::VisuHard => ShrinkRule::Hard { t: universal_threshold(st.count, sigma_n)? },
                ShrinkMethod::VisuSoft => ShrinkRule::Soft { t: universal_threshold(st.count, sigma_n)? },
                ShrinkMethod::VisuSemisoft => {
                    let t = universal_threshold(st.count, sigma_n)?;
                    if t > 0.0 {
                        ShrinkRule::SemiSoft { t1: t, t2: 2.0 * t }
                    } else {
                        ShrinkRule::IDENTITY
                    }
                }
                ShrinkMethod::Bayes => ShrinkRule::Soft { t: bayes_threshold(&st) },
                ShrinkMethod::Normal => ShrinkRule::Soft { t: normal_threshold(&st, levels) },
                ShrinkMethod::Sure => {
                    if sigma_n > 0.0 {
                        ShrinkRule::Soft { t: sure_threshold(coeffs, sigma_n)? }
                    } else {
                        ShrinkRule::IDENTITY
                    }
                }
                ShrinkMethod::LinearMmse => {
                    if st.sigma_x == 0.0 && st.sigma_n == 0.0 {
                        ShrinkRule::IDENTITY
                    } else {
                        ShrinkRule::LinearMmse(st)
                    }
                }
            };
            rules.insert(id, rule);
        }
        Ok(rules)
    }
}

impl fmt::Display for ShrinkMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShrinkMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShrinkMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown shrink method '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{dwt2_forward, haar_filters, Orientation};
    use crate::Raster;
    use alloc::vec;
    use proptest::prelude::*;

    fn sure_brute(coeffs: &[f64], sigma: f64) -> f64 {
        let m = coeffs.len() as f64;
        let risk = |t: f64| {
            m * sigma * sigma + coeffs.iter().map(|y| (y * y).min(t * t)).sum::<f64>()
                - 2.0 * sigma * sigma * coeffs.iter().filter(|y| y.abs() <= t).count() as f64
        };
        let mut cands: Vec<f64> = coeffs.iter().map(|v| v.abs()).collect();
        cands.push(0.0);
        cands.sort_by(f64::total_cmp);
        let mut best = (risk(cands[0]), cands[0]);
        for &t in &cands[1..] {
            if risk(t) < best.0 {
                best = (risk(t), t);
            }
        }
        best.1
    }

    #[test]
    fn scalar_rule_examples() {
        assert_eq!(hard_threshold(3.0, 1.0), 3.0);
        assert_eq!(hard_threshold(0.5, 1.0), 0.0);
        assert_eq!(hard_threshold(-3.0, 1.0), -3.0);
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(semisoft_threshold(5.0, 1.0, 2.0).unwrap(), 5.0);
        assert_eq!(semisoft_threshold(0.5, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(semisoft_threshold(1.5, 1.0, 2.0).unwrap(), 1.0);
        assert!(semisoft_threshold(1.5, 2.0, 2.0).is_err());
    }

    #[test]
    fn threshold_selectors() {
        assert_eq!(universal_threshold(1, 3.0).unwrap(), 0.0);
        assert!((universal_threshold(65536, 1.0).unwrap() - 4.7096).abs() < 1e-4);
        assert_eq!(universal_threshold(100, 0.0).unwrap(), 0.0);
        assert!(universal_threshold(0, 1.0).is_err());

        let st = SubbandStats::new(1.0, core::f64::consts::SQRT_2, 10).unwrap();
        assert!((st.sigma_x - 1.0).abs() < 1e-15);
        assert!((bayes_threshold(&st) - 1.0).abs() < 1e-15);
        assert_eq!(bayes_threshold(&SubbandStats::new(0.0, 2.0, 10).unwrap()), 0.0);
        let dead = SubbandStats::new(2.0, 1.0, 10).unwrap();
        assert_eq!(dead.sigma_x, 0.0);
        assert_eq!(bayes_threshold(&dead), f64::INFINITY);
    }

    #[test]
    fn linear_mmse_examples() {
        let equal = SubbandStats::new(1.0, core::f64::consts::SQRT_2, 4).unwrap();
        assert!((linear_mmse_shrink(3.0, &equal).unwrap() - 1.5).abs() < 1e-15);
        let clean = SubbandStats::new(0.0, 2.0, 4).unwrap();
        assert_eq!(linear_mmse_shrink(3.0, &clean).unwrap(), 3.0);
        let noise = SubbandStats::new(2.0, 1.0, 4).unwrap();
        assert_eq!(linear_mmse_shrink(3.0, &noise).unwrap(), 0.0);
        assert!(linear_mmse_shrink(3.0, &SubbandStats::new(0.0, 0.0, 4).unwrap()).is_err());
    }

    #[test]
    fn sure_examples() {
        assert_eq!(sure_threshold(&[0.0; 5], 1.0).unwrap(), 0.0);
        assert_eq!(sure_threshold(&[0.1, 0.1, 5.0], 1.0).unwrap(), 0.1);
        // Single coefficient 3: SURE(0) = 1, SURE(3) = 1 + 9 - 2 = 8.
        assert_eq!(sure_threshold(&[3.0], 1.0).unwrap(), 0.0);
        assert_eq!(sure_threshold(&[0.5], 1.0).unwrap(), 0.5);
        assert!(sure_threshold(&[], 1.0).is_err());
        assert!(sure_threshold(&[1.0], 0.0).is_err());
    }

    #[test]
    fn sure_integer_ties_match_brute_force() {
        // Integer data make every risk exact, so ties are real ties.
        let sets: [&[f64]; 4] = [&[1.0, -1.0, 2.0, 0.0], &[1.0, 1.0], &[2.0, -2.0, 2.0, 3.0], &[0.0, 1.0, 1.0, 1.0, 4.0]];
        for s in sets {
            for sigma in [0.5, 1.0, 2.0] {
                assert_eq!(sure_threshold(s, sigma).unwrap(), sure_brute(s, sigma), "{s:?} {sigma}");
            }
        }
    }

    #[test]
    fn apply_shrink_contract() {
        let img = Raster::from_fn(8, 8, |r, c| ((r * 7 + c * 3) % 11) as f64);
        let d = dwt2_forward(&img, &haar_filters(), 2).unwrap();
        let ident: RuleMap = d.subband_ids().into_iter().map(|id| (id, ShrinkRule::IDENTITY)).collect();
        assert_eq!(apply_shrink(&d, &ident).unwrap(), d);

        let kill: RuleMap =
            d.subband_ids().into_iter().map(|id| (id, ShrinkRule::Soft { t: f64::INFINITY })).collect();
        let k = apply_shrink(&d, &kill).unwrap();
        assert_eq!(k.approx(), d.approx());
        for id in k.subband_ids() {
            assert!(k.detail(id).unwrap().samples().iter().all(|&v| v == 0.0));
        }

        let mut partial = ident.clone();
        partial.remove(&SubbandId::new(2, Orientation::HL));
        assert!(apply_shrink(&d, &partial).is_err());
    }

    #[test]
    fn apply_shrink_per_coefficient() {
        use crate::wavelet::DetailLevel;
        let d = Decomposition::new(
            Raster::new(2, 1, vec![7.0, 8.0]).unwrap(),
            vec![DetailLevel {
                lh: Raster::zeros(2, 1),
                hl: Raster::zeros(2, 1),
                hh: Raster::new(2, 1, vec![3.0, -0.5]).unwrap(),
            }],
            2,
            4,
        )
        .unwrap();
        let rules: RuleMap = d.subband_ids().into_iter().map(|id| (id, ShrinkRule::Soft { t: 1.0 })).collect();
        let out = apply_shrink(&d, &rules).unwrap();
        assert_eq!(out.detail(SubbandId::new(1, Orientation::HH)).unwrap().samples(), &[2.0, 0.0]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in ShrinkMethod::ALL {
            assert_eq!(m.name().parse::<ShrinkMethod>().unwrap(), m);
        }
        assert!("bogus".parse::<ShrinkMethod>().is_err());
    }

    #[test]
    fn methods_produce_valid_rules() {
        let img = Raster::from_fn(32, 32, |r, c| (((r * 13 + c * 7) % 17) as f64) * 10.0 + if r > 16 { 50.0 } else { 0.0 });
        let d = dwt2_forward(&img, &haar_filters(), 2).unwrap();
        for m in ShrinkMethod::ALL {
            let rules = m.rules_for(&d).unwrap();
            assert_eq!(rules.len(), 6);
            apply_shrink(&d, &rules).unwrap();
        }
        // A constant image has sigma_n = 0; every method degrades to a valid rule.
        let flat = dwt2_forward(&Raster::filled(8, 8, 4.0), &haar_filters(), 1).unwrap();
        for m in ShrinkMethod::ALL {
            apply_shrink(&flat, &m.rules_for(&flat).unwrap()).unwrap();
        }
    }

    proptest! {
        #[test]
        fn rules_shrink_and_are_odd(y in -1e3f64..1e3, t in 0.0f64..100.0, dt in 1e-3f64..100.0, sn in 0.0f64..10.0, sy in 0.01f64..10.0) {
            let st = SubbandStats::new(sn, sy, 16).unwrap();
            let rules = [
                ShrinkRule::Soft { t },
                ShrinkRule::SemiSoft { t1: t, t2: t + dt },
                ShrinkRule::LinearMmse(st),
            ];
            for r in rules {
                prop_assert!(r.apply(y).abs() <= y.abs());
                prop_assert_eq!(r.apply(-y), -r.apply(y));
            }
            let h = hard_threshold(y, t);
            prop_assert!(h == 0.0 || h == y);
            prop_assert_eq!(hard_threshold(-y, t), -h);
            if y.abs() > t {
                let diff = hard_threshold(y, t) - soft_threshold(y, t);
                prop_assert!((diff - t.copysign(y)).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn semisoft_is_continuous(t1 in 0.0f64..10.0, dt in 0.1f64..10.0, y in 0.0f64..30.0) {
            let t2 = t1 + dt;
            let eps = 1e-9;
            let a = semisoft_threshold(y, t1, t2).unwrap();
            let b = semisoft_threshold(y + eps, t1, t2).unwrap();
            prop_assert!((a - b).abs() <= eps * (t2 / dt).max(1.0) + 1e-12);
        }

        #[test]
        fn sure_matches_brute_force(coeffs in proptest::collection::vec(-5.0f64..5.0, 1..40), sigma in 0.1f64..3.0) {
            prop_assert_eq!(sure_threshold(&coeffs, sigma).unwrap(), sure_brute(&coeffs, sigma));
        }
    }

    #[test]
    fn hard_is_discontinuous_only_at_threshold() {
        let t = 2.0;
        let eps = 1e-9;
        assert!((hard_threshold(t + eps, t) - hard_threshold(t - eps, t)).abs() > 1.0);
        assert!((soft_threshold(t + eps, t) - soft_threshold(t - eps, t)).abs() < 1e-8);
    }
}
