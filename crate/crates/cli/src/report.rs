//! CSV reports and provenance records.
//!
//! Numbers are written with the shortest representation that parses back
//! to the same `f64` (scientific notation for very small or large magnitudes); absent values are `n/a` and infinities `inf`/`-inf`.

use nshrink_core::metrics::MetricsReport;
use serde::Serialize;
use thiserror::Error;

pub const NOT_AVAILABLE: &str = "n/a";
pub const ERROR_PREFIX: &str = "error:";
pub const BENCH_COLUMNS: [&str; 6] = ["MSD", "NMV", "NSD", "ENL", "DR", "FOM"];
pub const METRICS_COLUMNS: [&str; 9] = ["NMV", "NV", "NSD", "MSE", "MSD", "SNR", "ENL", "DR", "FOM"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report: {0}")]
    Malformed(String),
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => NOT_AVAILABLE.into(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) => format!("{x:?}"),
    }
}

pub fn parse_value(s: &str) -> Result<Option<f64>, ReportError> {
    match s {
        NOT_AVAILABLE => Ok(None),
        "inf" => Ok(Some(f64::INFINITY)),
        "-inf" => Ok(Some(f64::NEG_INFINITY)),
        "nan" => Ok(Some(f64::NAN)),
        _ => s.parse().map(Some).map_err(|_| ReportError::Malformed(format!("bad number '{s}'"))),
    }
}

/// One row of a benchmark: the metrics of a filter output, or why it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub label: String,
    pub outcome: Result<MetricsReport, String>,
}

/// Benchmark table. The first row is the noisy input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Whether a clean reference was available, adding the SNR column.
    pub with_snr: bool,
    pub rows: Vec<BenchRow>,
}

fn bench_cells(r: &MetricsReport, with_snr: bool) -> Vec<String> {
    let mut cells: Vec<String> =
        [Some(r.msd), Some(r.nmv), Some(r.nsd), r.enl, r.dr, r.fom].into_iter().map(format_value).collect();
    if with_snr {
        cells.push(format_value(r.snr_db));
    }
    cells
}

impl BenchReport {
    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["filter"];
        h.extend(BENCH_COLUMNS);
        if self.with_snr {
            h.push("SNR");
        }
        h
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let width = self.header().len();
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            match &row.outcome {
                Ok(r) => rec.extend(bench_cells(r, self.with_snr)),
                Err(reason) => {
                    rec.push(format!("{ERROR_PREFIX}{reason}"));
                    rec.resize(width, String::new());
                }
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses a table written by [`BenchReport::to_csv`]. Columns that the
    /// bench layout does not carry (NV, MSE) come back as `NaN`/`None`.
    pub fn parse(text: &str) -> Result<BenchReport, ReportError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let mut records = rd.records();
        let header = records.next().ok_or_else(|| ReportError::Malformed("empty report".into()))??;
        let with_snr = match header.len() {
            7 => false,
            8 if &header[7] == "SNR" => true,
            _ => return Err(ReportError::Malformed(format!("unexpected header {:?}", header))),
        };
        if &header[0] != "filter" || header.iter().skip(1).take(6).ne(BENCH_COLUMNS) {
            return Err(ReportError::Malformed(format!("unexpected header {:?}", header)));
        }
        let mut rows = Vec::new();
        for rec in records {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(ReportError::Malformed(format!("row has {} fields, expected {}", rec.len(), header.len())));
            }
            let label = rec[0].to_string();
            if let Some(reason) = rec[1].strip_prefix(ERROR_PREFIX) {
                rows.push(BenchRow { label, outcome: Err(reason.to_string()) });
                continue;
            }
            let v: Vec<Option<f64>> = rec.iter().skip(1).map(parse_value).collect::<Result<_, _>>()?;
            let need = |i: usize| v[i].ok_or_else(|| ReportError::Malformed(format!("{} missing", BENCH_COLUMNS[i])));
            rows.push(BenchRow {
                label,
                outcome: Ok(MetricsReport {
                    msd: need(0)?,
                    nmv: need(1)?,
                    nsd: need(2)?,
                    enl: v[3],
                    dr: v[4],
                    fom: v[5],
                    snr_db: if with_snr { v[6] } else { None },
                    nv: f64::NAN,
                    mse: None,
                }),
            });
        }
        Ok(BenchReport { with_snr, rows })
    }

    /// Fixed-width table for the terminal.
    pub fn to_table(&self) -> String {
        let header = self.header();
        let mut lines = vec![header.iter().map(|h| format!("{h:>16}")).collect::<Vec<_>>().join(" ")];
        for row in &self.rows {
            let cells = match &row.outcome {
                Ok(r) => bench_cells(r, self.with_snr)
                    .into_iter()
                    .zip([Some(r.msd), Some(r.nmv), Some(r.nsd), r.enl, r.dr, r.fom, r.snr_db])
                    .map(|(s, v)| match v {
                        Some(x) if x.is_finite() => format!("{x:>16.6}"),
                        _ => format!("{s:>16}"),
                    })
                    .collect::<Vec<_>>(),
                Err(reason) => vec![format!(" {ERROR_PREFIX}{reason}")],
            };
            lines.push(format!("{:>16} {}", row.label, cells.join(" ")));
        }
        lines.join("\n") + "\n"
    }
}

/// All nine metrics of one candidate as a two-line CSV.
pub fn metrics_csv(r: &MetricsReport) -> String {
    let values = [Some(r.nmv), Some(r.nv), Some(r.nsd), r.mse, Some(r.msd), r.snr_db, r.enl, r.dr, r.fom];
    let row: Vec<String> = values.into_iter().map(format_value).collect();
    format!("{}\n{}\n", METRICS_COLUMNS.join(","), row.join(","))
}

pub fn loss_csv(epochs: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in epochs.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, format_value(Some(*l))));
    }
    out
}

/// What produced an artifact. Contains no timing so reruns match byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub derived_seeds: Vec<(String, u64)>,
    pub inputs: Vec<String>,
    /// Run results worth recording next to the artifacts.
    pub outcome: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seed,
            derived_seeds: Vec::new(),
            inputs: Vec::new(),
            outcome: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in [("tool", &self.tool), ("version", &self.version), ("command", &self.command), ("config_hash", &self.config_hash)] {
            out.push_str(&format!("{k} = {}\n", toml::Value::String(v.clone())));
        }
        out.push_str(&format!("seed = {}\n", self.seed));
        let inputs: Vec<toml::Value> = self.inputs.iter().map(|s| toml::Value::String(s.clone())).collect();
        out.push_str(&format!("inputs = {}\n", toml::Value::Array(inputs)));
        if !self.derived_seeds.is_empty() {
            out.push_str("\n[derived_seeds]\n");
            for (k, v) in &self.derived_seeds {
                out.push_str(&format!("{k} = \"{v}\"\n"));
            }
        }
        if !self.outcome.is_empty() {
            out.push_str("\n[outcome]\n");
            for (k, v) in &self.outcome {
                out.push_str(&format!("{k} = {}\n", toml::Value::String(v.clone())));
            }
        }
        out
    }
}
