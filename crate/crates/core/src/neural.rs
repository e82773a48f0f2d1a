//! Neural shrinkage: a small feed-forward network per detail subband that
//! maps a `P x P` patch of noisy coefficients to an estimate of the centre
//! coefficient.
//!
//! Each network has a tanh input layer applied to scale-normalised inputs, a
//! tanh hidden layer of `K` neurons and a linear output neuron:
//!
//! ```text
//! z0 = tanh(patch / s)
//! z1 = tanh(W·z0 + b)
//! x̂  = s · (v·z1 + c)
//! ```
//!
//! Training is per-sample stochastic gradient descent (LMS) on the squared
//! estimation error, back-propagated through every layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::speckle::{simulate_speckle, SpeckleParams};
use crate::wavelet::{dwt2_forward, dwt2_inverse, subband_ids, Decomposition, SubbandId, WaveletFilterPair};
use crate::{stats, Error, Raster, Result};

pub const DEFAULT_PATCH: usize = 3;
pub const DEFAULT_HIDDEN: usize = 16;
/// Input scale as a multiple of the subband's coefficient standard deviation.
pub const SCALE_SIGMAS: f64 = 3.0;
/// Seed offset for the second speckle realisation in noisy-pair mode.
pub const PAIR_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Weights of the network for one subband.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubbandNet {
    /// Normalisation scale `s > 0`.
    pub scale: f64,
    /// Input-to-hidden weights, `K x n` row-major.
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// Hidden-to-output weights, length `K`.
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

/// Activations kept from a forward pass for back-propagation.
struct Trace {
    z0: Vec<f64>,
    z1: Vec<f64>,
    out: f64,
}

/// Gradient of the normalised per-sample loss with respect to every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl SubbandNet {
    pub fn hidden(&self) -> usize {
        self.b_in.len()
    }

    pub fn inputs(&self) -> usize {
        self.w_in.len() / self.b_in.len().max(1)
    }

    fn validate(&self, inputs: usize, hidden: usize, id: SubbandId) -> Result<()> {
        if self.w_in.len() != inputs * hidden || self.b_in.len() != hidden || self.w_out.len() != hidden {
            return Err(Error::InvalidParameter(format!(
                "subband {id}: weight shapes do not match n={inputs}, K={hidden}"
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParameter(format!("subband {id}: scale must be positive, got {}", self.scale)));
        }
        let finite = self.w_in.iter().chain(&self.b_in).chain(&self.w_out).all(|v| v.is_finite());
        if !finite || !self.b_out.is_finite() {
            return Err(Error::InvalidParameter(format!("subband {id}: non-finite weight")));
        }
        Ok(())
    }

    fn run(&self, patch: &[f64], trace: &mut Trace) {
        let n = patch.len();
        trace.z0.clear();
        trace.z0.extend(patch.iter().map(|&p| libm::tanh(p / self.scale)));
        trace.z1.clear();
        for (k, row) in self.w_in.chunks_exact(n).enumerate() {
            let a = self.b_in[k] + row.iter().zip(&trace.z0).map(|(w, z)| w * z).sum::<f64>();
            trace.z1.push(libm::tanh(a));
        }
        trace.out = self.b_out + self.w_out.iter().zip(&trace.z1).map(|(v, z)| v * z).sum::<f64>();
    }

    /// Estimate of the centre coefficient, in coefficient units.
    pub fn forward(&self, patch: &[f64]) -> f64 {
        let mut t = Trace { z0: Vec::with_capacity(patch.len()), z1: Vec::with_capacity(self.hidden()), out: 0.0 };
        self.run(patch, &mut t);
        self.scale * t.out
    }

    /// Normalised loss `((x̂ − target)/s)²`, the quantity SGD descends.
    pub fn normalized_loss(&self, patch: &[f64], target: f64) -> f64 {
        let e = (self.forward(patch) - target) / self.scale;
        e * e
    }

    fn backprop(&self, patch: &[f64], target: f64, trace: &mut Trace, grad: &mut Gradient) -> f64 {
        self.run(patch, trace);
        let e = trace.out - target / self.scale;
        let d_out = 2.0 * e;
        grad.b_out = d_out;
        for k in 0..self.hidden() {
            let z1 = trace.z1[k];
            grad.w_out[k] = d_out * z1;
            let delta = d_out * self.w_out[k] * (1.0 - z1 * z1);
            grad.b_in[k] = delta;
            let row = &mut grad.w_in[k * patch.len()..(k + 1) * patch.len()];
            for (g, z0) in row.iter_mut().zip(&trace.z0) {
                *g = delta * z0;
            }
        }
        e * e
    }

    /// Gradient of [`SubbandNet::normalized_loss`] at one sample.
    pub fn gradient(&self, patch: &[f64], target: f64) -> Gradient {
        let mut trace = Trace { z0: vec![], z1: vec![], out: 0.0 };
        let mut g = self.zero_gradient();
        self.backprop(patch, target, &mut trace, &mut g);
        g
    }

    fn zero_gradient(&self) -> Gradient {
        Gradient {
            w_in: vec![0.0; self.w_in.len()],
            b_in: vec![0.0; self.b_in.len()],
            w_out: vec![0.0; self.w_out.len()],
            b_out: 0.0,
        }
    }

    fn step(&mut self, g: &Gradient, mu: f64) {
        for (w, d) in self.w_in.iter_mut().zip(&g.w_in) {
            *w -= mu * d;
        }
        for (w, d) in self.b_in.iter_mut().zip(&g.b_in) {
            *w -= mu * d;
        }
        for (w, d) in self.w_out.iter_mut().zip(&g.w_out) {
            *w -= mu * d;
        }
        self.b_out -= mu * g.b_out;
    }
}

/// One network per detail subband of a `levels`-deep decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralShrinker {
    patch: usize,
    hidden: usize,
    levels: usize,
    seed: u64,
    /// Indexed like [`subband_ids`]: level-major, LH/HL/HH.
    nets: Vec<SubbandNet>,
}

impl NeuralShrinker {
    /// Assembles a shrinker from stored weights, checking every invariant.
    pub fn from_parts(patch: usize, hidden: usize, levels: usize, seed: u64, nets: Vec<SubbandNet>) -> Result<Self> {
        check_architecture(patch, hidden)?;
        if levels == 0 || nets.len() != 3 * levels {
            return Err(Error::SubbandMismatch(format!(
                "{} subband networks for {levels} levels (expected {})",
                nets.len(),
                3 * levels
            )));
        }
        for (net, id) in nets.iter().zip(subband_ids(levels)) {
            net.validate(patch * patch, hidden, id)?;
        }
        Ok(Self { patch, hidden, levels, seed, nets })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn inputs(&self) -> usize {
        self.patch * self.patch
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nets(&self) -> &[SubbandNet] {
        &self.nets
    }

    fn index(&self, id: SubbandId) -> Result<usize> {
        if id.level == 0 || id.level > self.levels {
            return Err(Error::SubbandMismatch(format!("no network for subband {id} (levels = {})", self.levels)));
        }
        Ok((id.level - 1) * 3 + id.orientation.index())
    }

    pub fn net(&self, id: SubbandId) -> Result<&SubbandNet> {
        Ok(&self.nets[self.index(id)?])
    }

    pub fn net_mut(&mut self, id: SubbandId) -> Result<&mut SubbandNet> {
        let i = self.index(id)?;
        Ok(&mut self.nets[i])
    }

    /// Estimate of the centre coefficient of `patch` in subband `id`.
    pub fn forward(&self, patch: &[f64], id: SubbandId) -> Result<f64> {
        if patch.len() != self.inputs() {
            return Err(Error::InvalidParameter(format!(
                "patch has {} values, network expects {}",
                patch.len(),
                self.inputs()
            )));
        }
        Ok(self.net(id)?.forward(patch))
    }
}

fn check_architecture(patch: usize, hidden: usize) -> Result<()> {
    if patch == 0 || patch.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("patch side must be odd, got {patch}")));
    }
    if hidden <= patch * patch || hidden < 2 {
        return Err(Error::InvalidParameter(format!(
            "hidden layer needs more than {} neurons (and more than 1), got {hidden}",
            patch * patch
        )));
    }
    Ok(())
}

/// Fresh network set. `subband_sigma` lists the coefficient standard
/// deviation of every detail subband in [`subband_ids`] order; its length
/// fixes the number of levels. Weights are uniform in `±1/sqrt(fan_in)`,
/// biases zero and each scale `3·σ_y`.
pub fn init_shrinker(patch: usize, hidden: usize, subband_sigma: &[f64], seed: u64) -> Result<NeuralShrinker> {
    check_architecture(patch, hidden)?;
    if subband_sigma.is_empty() || !subband_sigma.len().is_multiple_of(3) {
        return Err(Error::SubbandMismatch(format!(
            "need three subband deviations per level, got {}",
            subband_sigma.len()
        )));
    }
    let levels = subband_sigma.len() / 3;
    let n = patch * patch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = Vec::with_capacity(subband_sigma.len());
    for (&sigma, id) in subband_sigma.iter().zip(subband_ids(levels)) {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::DegenerateSubband(format!("subband {id} has coefficient deviation {sigma}")));
        }
        let lim_in = 1.0 / libm::sqrt(n as f64);
        let lim_out = 1.0 / libm::sqrt(hidden as f64);
        let w_in = (0..n * hidden).map(|_| rng.random_range(-lim_in..=lim_in)).collect();
        let w_out = (0..hidden).map(|_| rng.random_range(-lim_out..=lim_out)).collect();
        nets.push(SubbandNet { scale: SCALE_SIGMAS * sigma, w_in, b_in: vec![0.0; hidden], w_out, b_out: 0.0 });
    }
    Ok(NeuralShrinker { patch, hidden, levels, seed, nets })
}

/// Where training targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reference {
    /// Coefficients of the noise-free image.
    #[default]
    Clean,
    /// Coefficients of a second, independently speckled copy.
    NoisyPair,
}

impl Reference {
    pub fn name(self) -> &'static str {
        match self {
            Reference::Clean => "clean",
            Reference::NoisyPair => "noisy-pair",
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Reference::Clean),
            "noisy-pair" => Ok(Reference::NoisyPair),
            other => Err(Error::InvalidParameter(format!("unknown reference '{other}' (clean | noisy-pair)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    /// Learning rate `μ`.
    pub mu: f64,
    pub epochs: usize,
    pub reference: Reference,
    pub shuffle_seed: u64,
    /// Stop after this many epochs without a new best loss; 0 disables.
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { mu: 1e-3, epochs: 30, reference: Reference::Clean, shuffle_seed: 0, patience: 5 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Epoch-mean squared estimation error in coefficient units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
}

impl LossTrace {
    pub fn initial(&self) -> Option<f64> {
        self.epochs.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epochs.last().copied()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Training pairs of one subband.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSamples {
    pub id: SubbandId,
    /// `count x n` noisy patches, row-major.
    pub patches: Vec<f64>,
    pub targets: Vec<f64>,
    /// Standard deviation of the noisy coefficients.
    pub sigma_y: f64,
}

impl SubbandSamples {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let n = self.patches.len() / self.targets.len();
        &self.patches[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub patch: usize,
    pub levels: usize,
    pub subbands: Vec<SubbandSamples>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.subbands.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noisy-coefficient deviation per subband, ready for [`init_shrinker`].
    pub fn subband_sigma(&self) -> Vec<f64> {
        self.subbands.iter().map(|s| s.sigma_y).collect()
    }

    /// Appends the samples of `other` subband by subband and recomputes each
    /// `sigma_y` over the pooled noisy coefficients (the patch centres).
    pub fn merge(&mut self, other: TrainingSet) -> Result<()> {
        if other.patch != self.patch || other.levels != self.levels || other.subbands.len() != self.subbands.len() {
            return Err(Error::SubbandMismatch(format!(
                "cannot merge training sets with (P={}, J={}) and (P={}, J={})",
                self.patch, self.levels, other.patch, other.levels
            )));
        }
        let centre = self.patch * self.patch / 2;
        for (mine, theirs) in self.subbands.iter_mut().zip(other.subbands) {
            if mine.id != theirs.id {
                return Err(Error::SubbandMismatch(format!("subband {} vs {}", mine.id, theirs.id)));
            }
            mine.patches.extend(theirs.patches);
            mine.targets.extend(theirs.targets);
            let n = self.patch * self.patch;
            let centres: Vec<f64> = mine.patches.chunks_exact(n).map(|p| p[centre]).collect();
            mine.sigma_y = stats::std_dev(&centres);
        }
        Ok(())
    }
}

/// Every `patch x patch` neighbourhood of `band`, one per coefficient in
/// row-major order, wrapping periodically at the borders.
pub fn extract_patches(band: &Raster, patch: usize) -> Vec<f64> {
    let r = (patch / 2) as isize;
    let mut out = Vec::with_capacity(band.len() * patch * patch);
    for row in 0..band.height() as isize {
        for col in 0..band.width() as isize {
            for dy in -r..=r {
                for dx in -r..=r {
                    out.push(band.get_wrapped(row + dy, col + dx));
                }
            }
        }
    }
    out
}

/// Pairs noisy patches with reference coefficients, subband by subband.
pub fn training_set_from_pair(
    noisy: &Raster,
    reference: &Raster,
    filters: &WaveletFilterPair,
    levels: usize,
    patch: usize,
) -> Result<TrainingSet> {
    noisy.ensure_same_shape(reference, "training pair")?;
    if patch == 0 || patch.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("patch side must be odd, got {patch}")));
    }
    let dn = dwt2_forward(noisy, filters, levels)?;
    let dr = dwt2_forward(reference, filters, levels)?;
    let subbands = dn
        .subband_ids()
        .into_iter()
        .map(|id| {
            let band = dn.detail(id).expect("subband id");
            SubbandSamples {
                id,
                patches: extract_patches(band, patch),
                targets: dr.detail(id).expect("subband id").samples().to_vec(),
                sigma_y: stats::std_dev(band.samples()),
            }
        })
        .collect();
    Ok(TrainingSet { patch, levels, subbands })
}

/// Simulates speckle on `clean` and builds the training pairs. In
/// noisy-pair mode the targets come from a second realisation seeded with
/// `seed ^ PAIR_SEED_OFFSET`.
pub fn build_training_set(
    clean: &Raster,
    params: &SpeckleParams,
    filters: &WaveletFilterPair,
    levels: usize,
    patch: usize,
    reference: Reference,
) -> Result<TrainingSet> {
    let noisy = simulate_speckle(clean, params)?;
    let target = match reference {
        Reference::Clean => clean.clone(),
        Reference::NoisyPair => {
            simulate_speckle(clean, &SpeckleParams { seed: params.seed ^ PAIR_SEED_OFFSET, ..*params })?
        }
    };
    training_set_from_pair(&noisy, &target, filters, levels, patch)
}

fn check_compatible(net: &NeuralShrinker, set: &TrainingSet) -> Result<()> {
    if set.patch != net.patch || set.levels != net.levels || set.subbands.len() != net.nets.len() {
        return Err(Error::SubbandMismatch(format!(
            "training set (P={}, J={}) does not fit network (P={}, J={})",
            set.patch, set.levels, net.patch, net.levels
        )));
    }
    Ok(())
}

/// Mean squared estimation error over the whole set, in coefficient units.
pub fn evaluate(net: &NeuralShrinker, set: &TrainingSet) -> Result<f64> {
    check_compatible(net, set)?;
    if set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let mut total = 0.0;
    for s in &set.subbands {
        let model = net.net(s.id)?;
        for i in 0..s.len() {
            let e = model.forward(s.patch(i)) - s.targets[i];
            total += e * e;
        }
    }
    Ok(total / set.len() as f64)
}

/// Per-sample SGD through all layers.
///
/// Samples from every subband are visited in a fresh seeded shuffle each
/// epoch; each step moves the sample's subband network against the gradient
/// of `((x̂ − x)/s)²` with step `μ`. The recorded loss is the epoch mean of
/// `(x̂ − x)²`. Aborts with [`Error::Diverged`] when an epoch loss exceeds
/// ten times the first epoch's (or is not finite).
pub fn train(net: &NeuralShrinker, set: &TrainingSet, cfg: &TrainingConfig) -> Result<(NeuralShrinker, LossTrace)> {
    cfg.validate()?;
    check_compatible(net, set)?;
    if set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let mut net = net.clone();
    let mut order: Vec<(usize, usize)> = set
        .subbands
        .iter()
        .enumerate()
        .flat_map(|(b, s)| (0..s.len()).map(move |i| (b, i)))
        .collect();
    let offsets: Vec<usize> = set
        .subbands
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.len();
            Some(o)
        })
        .collect();
    let mut losses = vec![0.0; order.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut trace = Trace { z0: Vec::with_capacity(net.inputs()), z1: Vec::with_capacity(net.hidden), out: 0.0 };
    let mut grad = net.nets[0].zero_gradient();
    let mut history = LossTrace::default();
    let (mut best, mut best_epoch) = (f64::INFINITY, 0usize);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &(b, i) in &order {
            let s = &set.subbands[b];
            let model = &mut net.nets[b];
            let e2 = model.backprop(s.patch(i), s.targets[i], &mut trace, &mut grad);
            losses[offsets[b] + i] = e2 * model.scale * model.scale;
            model.step(&grad, cfg.mu);
        }
        // Summed in sample order so the value does not depend on the shuffle.
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let initial = history.initial().unwrap_or(loss);
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::Diverged { epoch: epoch + 1, loss, initial });
        }
        history.epochs.push(loss);
        if loss < best {
            best = loss;
            best_epoch = epoch;
        } else if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((net, history))
}

/// Replaces every detail coefficient by the network estimate from its
/// neighbourhood, keeps `LL` and inverts the transform.
pub fn despeckle_ns(img: &Raster, net: &NeuralShrinker, filters: &WaveletFilterPair, levels: usize) -> Result<Raster> {
    if levels != net.levels {
        return Err(Error::SubbandMismatch(format!(
            "model was trained for {} levels, asked for {levels}",
            net.levels
        )));
    }
    let d = dwt2_forward(img, filters, levels)?;
    let shrunk = shrink_decomposition(&d, net)?;
    dwt2_inverse(&shrunk, filters)
}

/// Applies the networks to every detail subband of `d`.
pub fn shrink_decomposition(d: &Decomposition, net: &NeuralShrinker) -> Result<Decomposition> {
    if d.levels() != net.levels {
        return Err(Error::SubbandMismatch(format!(
            "decomposition has {} levels, model {}",
            d.levels(),
            net.levels
        )));
    }
    let mut out = d.clone();
    let n = net.inputs();
    for id in d.subband_ids() {
        let band = d.detail(id).expect("subband id");
        let model = net.net(id)?;
        let patches = extract_patches(band, net.patch);
        let est: Vec<f64> = patches.chunks_exact(n).map(|p| model.forward(p)).collect();
        *out.detail_mut(id).expect("subband id") = Raster::new(band.width(), band.height(), est)?;
    }
    Ok(out)
}
