//! Feature files: `<base>.f32` holds the row-major little-endian f32 matrix,
//! `<base>.meta.json` describes it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{column_names, EncoderConfig, EncoderError, FeatureEpoch, Result, NUM_COLUMNS};
use crate::signal_io::Stage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub subject_id: String,
    pub epoch_index: usize,
    pub stage: Option<Stage>,
    #[serde(rename = "T")]
    pub rows: usize,
    pub columns: Vec<String>,
    pub params: EncoderConfig,
}

fn sidecar_path(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn data_path(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".f32");
    PathBuf::from(s)
}

fn file_err(path: &Path, reason: impl Into<String>) -> EncoderError {
    EncoderError::FeatureFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Writes `<base>.meta.json` then `<base>.f32`. Returns the data path.
pub fn write_feature_file(base: &Path, features: &FeatureEpoch, params: &EncoderConfig) -> Result<PathBuf> {
    let meta = FeatureMeta {
        subject_id: features.subject_id.clone(),
        epoch_index: features.epoch_index,
        stage: features.stage,
        rows: features.rows(),
        columns: column_names(),
        params: *params,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| file_err(base, e.to_string()))?;
    std::fs::write(sidecar_path(base), json)?;
    let bytes: Vec<u8> = features.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = data_path(base);
    std::fs::write(&path, bytes)?;
    Ok(path)
}

/// Reads a feature file given its base path or its `.f32` path.
pub fn read_feature_file(path: &Path) -> Result<(FeatureEpoch, FeatureMeta)> {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let meta_path = sidecar_path(&base);
    let meta_text = std::fs::read_to_string(&meta_path)?;
    let meta: FeatureMeta =
        serde_json::from_str(&meta_text).map_err(|e| file_err(&meta_path, e.to_string()))?;
    if meta.columns.len() != NUM_COLUMNS {
        return Err(file_err(&meta_path, format!("expected {NUM_COLUMNS} columns")));
    }

    let dpath = data_path(&base);
    let bytes = std::fs::read(&dpath)?;
    let expected = meta.rows * NUM_COLUMNS * 4;
    if bytes.len() != expected {
        return Err(file_err(&dpath, format!("{} bytes, expected {expected}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let fe = FeatureEpoch::new(data, meta.rows, meta.stage, meta.epoch_index, meta.subject_id.clone())
        .map_err(|e| file_err(&dpath, e.to_string()))?;
    Ok((fe, meta))
}
