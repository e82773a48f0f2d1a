//! The five subcommands. Each writes its artifacts under the configured
//! output directory; progress and timing go to the log on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use log::{info, warn};
use nshrink_core::metrics::{full_report, MetricsReport};
use nshrink_core::neural::{build_training_set, init_shrinker, shrink_decomposition, train, LossTrace, NeuralShrinker, TrainingSet};
use nshrink_core::pipeline::{Despeckler, FilterName};
use nshrink_core::speckle::simulate_speckle;
use nshrink_core::wavelet::{dwt2_forward, dwt2_inverse, Decomposition};
use nshrink_core::{Error as CoreError, Raster};

use crate::config::{usage, Settings};
use crate::io::{read_image, write_atomic, write_decomposition, write_f64_raster, write_pgm, ImageHeader, PnmEncoding};
use crate::model::{load_model, save_model, SavedModel};
use crate::report::{loss_csv, metrics_csv, BenchReport, BenchRow, Provenance};

fn out_path(s: &Settings, name: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&s.out_dir).with_context(|| format!("creating {}", s.out_dir.display()))?;
    Ok(s.out_dir.join(name))
}

fn write_text(s: &Settings, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    let path = out_path(s, name)?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Largest top-left crop whose sides divide by `2^levels`, logged when it bites.
pub fn crop_for_levels(img: &Raster, levels: usize, what: &str) -> anyhow::Result<Raster> {
    let m = 1usize.checked_shl(levels as u32).filter(|&m| m <= img.width().min(img.height()));
    let m = m.ok_or_else(|| {
        anyhow!("{what}: {}x{} image is too small for {levels} decomposition levels", img.width(), img.height())
    })?;
    let (w, h) = (img.width() / m * m, img.height() / m * m);
    if (w, h) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    warn!("{what}: cropping {}x{} to {w}x{h} so both sides divide by {m}", img.width(), img.height());
    Ok(img.crop(w, h)?)
}

fn write_image_pair(s: &Settings, stem: &str, img: &Raster, preview: ImageHeader) -> anyhow::Result<()> {
    write_f64_raster(img, &out_path(s, &format!("{stem}.f64"))?)?;
    write_pgm(img, preview, PnmEncoding::Binary, &out_path(s, &format!("{stem}.pgm"))?)?;
    Ok(())
}

pub fn simulate(s: &Settings, input: &Path) -> anyhow::Result<()> {
    let clean = read_image(input)?;
    let params = s.speckle_params(s.seed)?;
    let speckled = simulate_speckle(&clean, &params)?;
    write_image_pair(s, "speckled", &speckled, ImageHeader::preview_for(&clean))?;
    let sidecar = format!(
        "family = \"{}\"\nlooks = {}\nseed = {}\ninput = {}\n",
        params.family.name(),
        params.looks,
        params.seed,
        toml::Value::String(input.display().to_string())
    );
    write_text(s, "speckle.toml", &sidecar)?;
    info!("simulate: {} speckle, seed {}, wrote {}", params.family.name(), params.seed, s.out_dir.display());
    Ok(())
}

/// Resolves a filter name and the current settings into a runnable filter.
pub fn build_despeckler(s: &Settings, name: &str, model: Option<&Path>) -> anyhow::Result<Despeckler> {
    Ok(match FilterName::parse(name).map_err(|e| usage(e.to_string()))? {
        FilterName::Shrink(method) => {
            Despeckler::Wavelet { method, levels: s.filter.levels, filters: s.filter.wavelet.filters() }
        }
        FilterName::Neural => {
            let path = model.ok_or_else(|| usage("the neuralshrink filter needs --model <model.json>"))?;
            let saved = load_model(path)?;
            Despeckler::Neural { model: saved.shrinker, filters: saved.wavelet.filters() }
        }
        FilterName::Spatial(kind) => Despeckler::Spatial(s.spatial_filter(kind)?),
    })
}

/// Shrunk decomposition of `img`, for wavelet filters only.
fn shrunk_coefficients(d: &Despeckler, img: &Raster) -> anyhow::Result<Option<Decomposition>> {
    Ok(match d {
        Despeckler::Wavelet { method, levels, filters } => {
            let dec = dwt2_forward(img, filters, *levels)?;
            let rules = method.rules_for(&dec)?;
            Some(nshrink_core::shrink::apply_shrink(&dec, &rules)?)
        }
        Despeckler::Neural { model, filters } => Some(shrink_decomposition(&dwt2_forward(img, filters, model.levels())?, model)?),
        Despeckler::Spatial(_) => None,
    })
}

pub struct DespeckleArgs<'a> {
    pub input: &'a Path,
    pub filter: &'a str,
    pub clean: Option<&'a Path>,
    pub model: Option<&'a Path>,
    pub coeffs_dir: Option<&'a Path>,
}

pub fn despeckle(s: &Settings, a: &DespeckleArgs<'_>) -> anyhow::Result<Option<MetricsReport>> {
    let despeckler = build_despeckler(s, a.filter, a.model)?;
    let mode = s.snr_mode()?;
    let mut noisy = read_image(a.input)?;
    let mut clean = a.clean.map(read_image).transpose()?;
    if let Some(levels) = despeckler.levels() {
        noisy = crop_for_levels(&noisy, levels, "input")?;
        clean = clean.map(|c| crop_for_levels(&c, levels, "clean reference")).transpose()?;
    }
    let start = Instant::now();
    let out = match a.coeffs_dir {
        Some(dir) => {
            let coeffs = shrunk_coefficients(&despeckler, &noisy)?
                .ok_or_else(|| usage(format!("--coeffs-dir needs a wavelet filter, not {}", a.filter)))?;
            write_decomposition(&coeffs, dir)?;
            let filters = match &despeckler {
                Despeckler::Wavelet { filters, .. } | Despeckler::Neural { filters, .. } => filters,
                Despeckler::Spatial(_) => unreachable!("spatial filters have no coefficients"),
            };
            dwt2_inverse(&coeffs, filters)?
        }
        None => despeckler.apply(&noisy)?,
    };
    info!("despeckle: {} took {:.3}s", despeckler.label(), start.elapsed().as_secs_f64());
    write_image_pair(s, "despeckled", &out, ImageHeader::preview_for(&noisy))?;
    let Some(clean) = clean else { return Ok(None) };
    let report = full_report(Some(&clean), &noisy, &out, mode)?;
    let csv = metrics_csv(&report);
    write_text(s, "metrics.csv", &csv)?;
    print!("{csv}");
    Ok(Some(report))
}

pub struct TrainOutcome {
    pub model: NeuralShrinker,
    pub trace: LossTrace,
    pub mu: f64,
    pub halvings: u32,
}

/// Trains on `set`, restarting with half the learning rate after each
/// divergence, up to `max_halvings` times.
pub fn train_with_guard(s: &Settings, set: &TrainingSet) -> anyhow::Result<TrainOutcome> {
    let mut cfg = s.training_config()?;
    let init = init_shrinker(s.training.patch, s.training.hidden, &set.subband_sigma(), s.init_seed())?;
    for halvings in 0..=s.training.max_halvings {
        match train(&init, set, &cfg) {
            Ok((model, trace)) => return Ok(TrainOutcome { model, trace, mu: cfg.mu, halvings }),
            Err(e @ CoreError::Diverged { .. }) if halvings < s.training.max_halvings => {
                warn!("train: {e}; retrying with mu = {}", cfg.mu / 2.0);
                cfg.mu /= 2.0;
            }
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("loop returns on its last iteration")
}

pub fn train_command(s: &Settings, inputs: &[PathBuf]) -> anyhow::Result<TrainOutcome> {
    if inputs.is_empty() {
        return Err(usage("train needs at least one clean image"));
    }
    let levels = s.filter.levels;
    let filters = s.filter.wavelet.filters();
    let reference = s.training_config()?.reference;
    let mut provenance = Provenance::new("train", s.hash(), s.seed);
    let mut set: Option<TrainingSet> = None;
    for (i, path) in inputs.iter().enumerate() {
        let clean = crop_for_levels(&read_image(path)?, levels, &path.display().to_string())?;
        let seed = s.training_speckle_seed(i);
        let part = build_training_set(&clean, &s.speckle_params(seed)?, &filters, levels, s.training.patch, reference)?;
        match &mut set {
            Some(all) => all.merge(part)?,
            None => set = Some(part),
        }
        provenance.inputs.push(path.display().to_string());
        provenance.derived_seeds.push((format!("speckle_{i}"), seed));
    }
    let set = set.expect("at least one input");
    let start = Instant::now();
    let outcome = train_with_guard(s, &set)?;
    info!(
        "train: {} samples, {} epochs in {:.3}s, final loss {:?}, mu {} after {} halving(s)",
        set.len(),
        outcome.trace.len(),
        start.elapsed().as_secs_f64(),
        outcome.trace.last(),
        outcome.mu,
        outcome.halvings
    );
    let saved = SavedModel { shrinker: outcome.model.clone(), wavelet: s.filter.wavelet };
    save_model(&saved, &out_path(s, "model.json")?)?;
    write_text(s, "loss.csv", &loss_csv(&outcome.trace.epochs))?;
    provenance.derived_seeds.push(("init".into(), s.init_seed()));
    provenance.derived_seeds.push(("shuffle".into(), s.shuffle_seed()));
    provenance.outcome.push(("mu".into(), outcome.mu.to_string()));
    provenance.outcome.push(("halvings".into(), outcome.halvings.to_string()));
    provenance.outcome.push(("epochs_run".into(), outcome.trace.len().to_string()));
    write_text(s, "train.provenance.toml", &provenance.to_toml())?;
    Ok(outcome)
}

pub fn bench(s: &Settings, noisy_path: &Path, clean_path: Option<&Path>, model: Option<&Path>) -> anyhow::Result<BenchReport> {
    if s.filters.is_empty() {
        return Err(usage("bench needs at least one filter (--filters or `filters` in the config)"));
    }
    let mode = s.snr_mode()?;
    let despecklers: Vec<(String, Despeckler)> =
        s.filters.iter().map(|n| Ok((n.clone(), build_despeckler(s, n, model)?))).collect::<anyhow::Result<_>>()?;
    let mut noisy = read_image(noisy_path)?;
    let mut clean = clean_path.map(read_image).transpose()?;
    if let Some(levels) = despecklers.iter().filter_map(|(_, d)| d.levels()).max() {
        noisy = crop_for_levels(&noisy, levels, "input")?;
        clean = clean.map(|c| crop_for_levels(&c, levels, "clean reference")).transpose()?;
    }
    let clean = clean.as_ref();
    let mut rows = vec![BenchRow { label: "noisy".into(), outcome: full_report(clean, &noisy, &noisy, mode).map_err(|e| e.to_string()) }];
    for (label, d) in &despecklers {
        let start = Instant::now();
        let outcome = d.apply(&noisy).and_then(|out| full_report(clean, &noisy, &out, mode)).map_err(|e| e.to_string());
        match &outcome {
            Ok(_) => info!("bench: {label} took {:.3}s", start.elapsed().as_secs_f64()),
            Err(e) => warn!("bench: {label} failed: {e}"),
        }
        rows.push(BenchRow { label: label.clone(), outcome });
    }
    let report = BenchReport { with_snr: clean.is_some(), rows };
    write_text(s, "bench.csv", &report.to_csv()?)?;
    let mut provenance = Provenance::new("bench", s.hash(), s.seed);
    provenance.inputs.push(noisy_path.display().to_string());
    provenance.inputs.extend(clean_path.map(|p| p.display().to_string()));
    provenance.inputs.extend(model.map(|p| p.display().to_string()));
    write_text(s, "bench.provenance.toml", &provenance.to_toml())?;
    print!("{}", report.to_table());
    Ok(report)
}

pub fn metrics_command(s: &Settings, noisy: &Path, candidate: &Path, clean: Option<&Path>) -> anyhow::Result<MetricsReport> {
    let mode = s.snr_mode()?;
    let noisy = read_image(noisy)?;
    let candidate = read_image(candidate)?;
    let clean = clean.map(read_image).transpose()?;
    let report = full_report(clean.as_ref(), &noisy, &candidate, mode)?;
    let csv = metrics_csv(&report);
    write_text(s, "metrics.csv", &csv)?;
    print!("{csv}");
    Ok(report)
}
