//! JSON persistence for trained neural shrinkers.

use std::fs;
use std::path::Path;

use nshrink_core::neural::{NeuralShrinker, SubbandNet};
use nshrink_core::wavelet::subband_ids;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::WaveletKind;
use crate::io::{write_atomic, FormatError};

pub const MODEL_FORMAT: &str = "nshrink-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    File(#[from] FormatError),
    #[error("{path}: not a model file: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: model format '{found}' is not '{MODEL_FORMAT}'")]
    WrongFormat { path: String, found: String },
    #[error("{path}: model version {found} is not supported (expected {MODEL_VERSION})")]
    Version { path: String, found: u32 },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubbandRecord {
    subband: String,
    #[serde(flatten)]
    net: SubbandNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    patch: usize,
    hidden: usize,
    levels: usize,
    seed: u64,
    wavelet: WaveletKind,
    subbands: Vec<SubbandRecord>,
}

/// A trained shrinker together with the wavelet it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub shrinker: NeuralShrinker,
    pub wavelet: WaveletKind,
}

pub fn encode_model(model: &SavedModel) -> String {
    let s = &model.shrinker;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        patch: s.patch(),
        hidden: s.hidden(),
        levels: s.levels(),
        seed: s.seed(),
        wavelet: model.wavelet,
        subbands: subband_ids(s.levels())
            .into_iter()
            .zip(s.nets())
            .map(|(id, net)| SubbandRecord { subband: id.to_string(), net: net.clone() })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
    text.push('\n');
    text
}

pub fn decode_model(text: &str, path: &str) -> Result<SavedModel, ModelError> {
    // Check the envelope first so a future version reports as such rather
    // than as a field mismatch.
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelError::Parse { path: path.into(), reason: e.to_string() })?;
    let format = raw.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != MODEL_FORMAT {
        return Err(ModelError::WrongFormat { path: path.into(), found: format.into() });
    }
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_VERSION {
        return Err(ModelError::Version { path: path.into(), found: version });
    }
    let file: ModelFile =
        serde_json::from_value(raw).map_err(|e| ModelError::Parse { path: path.into(), reason: e.to_string() })?;
    let invalid = |reason: String| ModelError::Invalid { path: path.into(), reason };
    let ids = subband_ids(file.levels);
    if ids.len() != file.subbands.len() {
        return Err(invalid(format!("{} subband records for J={}", file.subbands.len(), file.levels)));
    }
    for (id, rec) in ids.iter().zip(&file.subbands) {
        if rec.subband != id.to_string() {
            return Err(invalid(format!("expected subband {id}, found {}", rec.subband)));
        }
    }
    let nets = file.subbands.into_iter().map(|r| r.net).collect();
    let shrinker = NeuralShrinker::from_parts(file.patch, file.hidden, file.levels, file.seed, nets)
        .map_err(|e| invalid(e.to_string()))?;
    Ok(SavedModel { shrinker, wavelet: file.wavelet })
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<(), ModelError> {
    Ok(write_atomic(path, encode_model(model).as_bytes())?)
}

pub fn load_model(path: &Path) -> Result<SavedModel, ModelError> {
    let text = fs::read_to_string(path)
        .map_err(|error| FormatError::Io { path: path.to_path_buf(), error })?;
    decode_model(&text, &path.display().to_string())
}
