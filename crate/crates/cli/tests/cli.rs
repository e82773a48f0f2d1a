use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nshrink::io::{read_f64_raster, read_image, write_f64_raster, write_pgm, ImageHeader, PnmEncoding};
use nshrink::model::load_model;
use nshrink::report::BenchReport;
use nshrink_core::metrics::nv;
use nshrink_core::synthetic::piecewise_constant_scene;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nshrink")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    o
}

fn workspace(w: usize, h: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let scene = piecewise_constant_scene(w, h, 11);
    write_pgm(&scene, ImageHeader::GRAY8, PnmEncoding::Binary, &dir.path().join("clean.pgm")).unwrap();
    ok(dir.path(), &["simulate", "clean.pgm", "--seed", "4", "--out-dir", "sim"]);
    dir
}

#[test]
fn simulate_writes_raster_preview_and_sidecar() {
    let dir = workspace(32, 32);
    let d = dir.path().join("sim");
    let speckled = read_f64_raster(&d.join("speckled.f64")).unwrap();
    assert_eq!((speckled.width(), speckled.height()), (32, 32));
    assert_eq!(read_image(&d.join("speckled.pgm")).unwrap().width(), 32);
    let sidecar: toml::Table = toml::from_str(&fs::read_to_string(d.join("speckle.toml")).unwrap()).unwrap();
    assert_eq!(sidecar["family"].as_str(), Some("exponential-intensity"));
    assert_eq!(sidecar["seed"].as_integer(), Some(4));
    assert_eq!(sidecar["looks"].as_integer(), Some(1));
}

#[test]
fn identity_filter_returns_input() {
    let dir = workspace(32, 32);
    ok(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "identity", "--out-dir", "id"]);
    let input = read_f64_raster(&dir.path().join("sim/speckled.f64")).unwrap();
    let out = read_f64_raster(&dir.path().join("id/despeckled.f64")).unwrap();
    assert!(out.max_abs_diff(&input) < 1e-10);
}

#[test]
fn visushrink_hard_lowers_variance_and_reports_metrics() {
    let dir = workspace(32, 32);
    let o = ok(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "visushrink-hard", "--clean", "clean.pgm", "--out-dir", "vh"]);
    let input = read_f64_raster(&dir.path().join("sim/speckled.f64")).unwrap();
    let out = read_f64_raster(&dir.path().join("vh/despeckled.f64")).unwrap();
    assert!(nv(&out) < nv(&input));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("NMV,NV,NSD,MSE,MSD,SNR,ENL,DR,FOM\n"));
    assert_eq!(fs::read_to_string(dir.path().join("vh/metrics.csv")).unwrap(), stdout);
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace(16, 16);
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "gamma-map"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("visushrink-soft") && stderr(&o).contains("enhanced-frost"));
    let o = run(dir.path(), &["bench", "sim/speckled.f64"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "neuralshrink"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "lee", "--window", "4"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "windwo = 3\n").unwrap();
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "lee", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_and_name_the_path() {
    let dir = workspace(16, 16);
    let o = run(dir.path(), &["simulate", "missing.pgm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.pgm"));
    fs::write(dir.path().join("short.pgm"), "P2\n2 2\n255\n0 255 128\n").unwrap();
    let o = run(dir.path(), &["simulate", "short.pgm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("short.pgm") && stderr(&o).contains("truncated"));
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "bayesshrink", "--levels", "6"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn inputs_are_cropped_to_the_decomposition_grid() {
    let dir = tempfile::tempdir().unwrap();
    let scene = piecewise_constant_scene(42, 38, 2);
    write_f64_raster(&scene, &dir.path().join("odd.f64")).unwrap();
    let o = ok(dir.path(), &["despeckle", "odd.f64", "--filter", "bayesshrink", "--levels", "2"]);
    assert!(stderr(&o).contains("cropping 42x38 to 40x36"), "{}", stderr(&o));
    let out = read_f64_raster(&dir.path().join("despeckled.f64")).unwrap();
    assert_eq!((out.width(), out.height()), (40, 36));
    let o = ok(dir.path(), &["despeckle", "odd.f64", "--filter", "lee", "--out-dir", "lee"]);
    assert!(!stderr(&o).contains("cropping"));
}

#[test]
fn train_then_bench_with_all_row_kinds() {
    let dir = workspace(32, 32);
    ok(dir.path(), &["train", "clean.pgm", "--seed", "2", "--epochs", "6", "--patience", "0", "--out-dir", "m"]);
    let loss = fs::read_to_string(dir.path().join("m/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 6);
    let model = load_model(&dir.path().join("m/model.json")).unwrap();
    assert_eq!((model.shrinker.patch(), model.shrinker.hidden(), model.shrinker.levels()), (3, 16, 1));

    let o = ok(dir.path(), &["bench", "sim/speckled.f64", "--clean", "clean.pgm", "--model", "m/model.json", "--filters", "visushrink-soft,bayesshrink,neuralshrink", "--out-dir", "b"]);
    let csv = fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    let report = BenchReport::parse(&csv).unwrap();
    assert!(report.with_snr);
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["noisy", "visushrink-soft", "bayesshrink", "neuralshrink"]);
    assert!(report.rows.iter().all(|r| r.outcome.is_ok()));
    assert_eq!(report.to_csv().unwrap(), csv);
    assert!(String::from_utf8(o.stdout).unwrap().contains("neuralshrink"));
    let prov: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("b/bench.provenance.toml")).unwrap()).unwrap();
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);

    // A model trained for one level cannot run on a decomposition it does not fit.
    let tiny = piecewise_constant_scene(2, 2, 1);
    write_f64_raster(&tiny, &dir.path().join("tiny.f64")).unwrap();
    let o = run(dir.path(), &["bench", "tiny.f64", "--filters", "median,visushrink-soft", "--levels", "1", "--out-dir", "t"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = BenchReport::parse(&fs::read_to_string(dir.path().join("t/bench.csv")).unwrap()).unwrap();
    assert!(!t.with_snr);
    assert_eq!(t.rows.len(), 3);
}

#[test]
fn failing_filter_marks_its_row() {
    let dir = tempfile::tempdir().unwrap();
    // Constant input: the despeckled image has zero variance, so DR is absent,
    // and a constant image has no edges, so FOM is absent; neither is an error.
    write_f64_raster(&nshrink_core::Raster::filled(8, 8, 5.0), &dir.path().join("flat.f64")).unwrap();
    ok(dir.path(), &["bench", "flat.f64", "--filters", "lee,visushrink-soft"]);
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("n/a"));

    // Negative samples make the log-domain filters fail; that row alone is marked.
    let mut samples = vec![5.0; 64];
    samples[10] = -3.0;
    write_f64_raster(&nshrink_core::Raster::new(8, 8, samples).unwrap(), &dir.path().join("neg.f64")).unwrap();
    ok(dir.path(), &["bench", "neg.f64", "--filters", "lee,visushrink-soft", "--out-dir", "neg"]);
    let report = BenchReport::parse(&fs::read_to_string(dir.path().join("neg/bench.csv")).unwrap()).unwrap();
    assert!(report.rows[1].outcome.is_err(), "{:?}", report.rows[1]);
    assert!(report.rows[2].outcome.is_ok());
}

#[test]
fn divergence_guard_halves_the_learning_rate() {
    let dir = workspace(32, 32);
    let o = ok(dir.path(), &["train", "clean.pgm", "--mu", "2", "--epochs", "4", "--out-dir", "m"]);
    assert!(stderr(&o).contains("retrying with mu"), "{}", stderr(&o));
    let prov: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("m/train.provenance.toml")).unwrap()).unwrap();
    let halvings: u32 = prov["outcome"]["halvings"].as_str().unwrap().parse().unwrap();
    assert!(halvings >= 1);

    fs::write(dir.path().join("strict.toml"), "[training]\nmax_halvings = 0\n").unwrap();
    let o = run(dir.path(), &["train", "clean.pgm", "--mu", "1e6", "--epochs", "4", "--config", "strict.toml", "--out-dir", "s"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = workspace(16, 16);
    fs::write(dir.path().join("c.toml"), "seed = 99\n[speckle]\nfamily = \"gamma-multilook\"\nlooks = 4\n").unwrap();
    ok(dir.path(), &["simulate", "clean.pgm", "--config", "c.toml", "--seed", "3", "--out-dir", "o"]);
    let sidecar: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("o/speckle.toml")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"].as_integer(), Some(3));
    assert_eq!(sidecar["family"].as_str(), Some("gamma-multilook"));
    assert_eq!(sidecar["looks"].as_integer(), Some(4));
}

#[test]
fn coefficient_directory_reconstructs_the_output() {
    let dir = workspace(32, 32);
    ok(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "sureshrink", "--levels", "2", "--coeffs-dir", "c", "--out-dir", "o"]);
    let d = nshrink::io::read_decomposition(&dir.path().join("c")).unwrap();
    let back = nshrink_core::wavelet::dwt2_inverse(&d, &nshrink_core::wavelet::haar_filters()).unwrap();
    let out = read_f64_raster(&dir.path().join("o/despeckled.f64")).unwrap();
    assert_eq!(back, out);
    let o = run(dir.path(), &["despeckle", "sim/speckled.f64", "--filter", "lee", "--coeffs-dir", "c2"]);
    assert_eq!(o.status.code(), Some(2));
}
