//! Recording ingestion, annotation parsing, and 30-second epoch segmentation.
//!
//! Records arrive either as EDF files (one channel is selected) or as a
//! single-column CSV. Annotations are one legacy R&K token per line; S3 and S4
//! both collapse into N3.

mod csv;
mod edf;
mod synth;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::edf::{parse_header as parse_edf_header, write_edf, EdfHeader, EdfSignalHeader};
pub use self::synth::{synth_record, SyntheticScenario};

/// Canonical SHHS sampling rate.
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 125;

/// Seconds per scored epoch.
pub const EPOCH_SECONDS: u32 = 30;

/// Every epoch length must be a multiple of this (the accumulation width).
pub const EPOCH_LENGTH_QUANTUM: usize = 25;

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("channel {requested:?} not present (available: {available:?})")]
    ChannelAbsent {
        requested: String,
        available: Vec<String>,
    },
    #[error("sample rate {found} Hz does not match configured {expected} Hz (resampling disabled)")]
    RateMismatch { found: u32, expected: u32 },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("unrecognized stage label {token:?} on line {line}")]
    UnrecognizedLabel { token: String, line: usize },
    #[error("record has {len} samples, shorter than one epoch of {epoch_len}")]
    RecordTooShort { len: usize, epoch_len: usize },
    #[error("epoch length {0} is not a multiple of {EPOCH_LENGTH_QUANTUM}")]
    EpochLength(usize),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("synthetic scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, SignalIoError>;

/// Sleep stage under the AASM five-class scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Wake,
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];
    pub const COUNT: usize = 5;

    /// Position in the fixed (Wake, N1, N2, N3, REM) order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        Stage::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Wake => "Wake",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
        }
    }

    /// Legacy annotation token for this stage (N3 is written as S3).
    pub fn annotation_token(self) -> &'static str {
        match self {
            Stage::Wake => "W",
            Stage::N1 => "S1",
            Stage::N2 => "S2",
            Stage::N3 => "S3",
            Stage::Rem => "REM",
        }
    }

    /// Maps one annotation token. `Ok(None)` means the epoch is unscored.
    pub fn from_annotation(token: &str) -> std::result::Result<Option<Stage>, ()> {
        match token {
            "W" => Ok(Some(Stage::Wake)),
            "S1" => Ok(Some(Stage::N1)),
            "S2" => Ok(Some(Stage::N2)),
            "S3" | "S4" => Ok(Some(Stage::N3)),
            "REM" => Ok(Some(Stage::Rem)),
            "UNSCORED" => Ok(None),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Wake" | "W" => Ok(Stage::Wake),
            "N1" => Ok(Stage::N1),
            "N2" => Ok(Stage::N2),
            "N3" => Ok(Stage::N3),
            "REM" | "Rem" => Ok(Stage::Rem),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// One channel of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub channel_name: String,
    pub subject_id: String,
}

impl RawRecord {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: u32,
        channel_name: impl Into<String>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(SignalIoError::InvalidRecord("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(SignalIoError::InvalidRecord("no samples".into()));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalIoError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel_name: channel_name.into(),
            subject_id: subject_id.into(),
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// A single 30-second window, the unit of classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub stage: Option<Stage>,
    pub epoch_index: usize,
    pub subject_id: String,
}

impl Epoch {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: u32,
        stage: Option<Stage>,
        epoch_index: usize,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let expected = epoch_len(sample_rate_hz);
        if samples.len() != expected {
            return Err(SignalIoError::InvalidRecord(format!(
                "epoch has {} samples, expected {expected}",
                samples.len()
            )));
        }
        if expected % EPOCH_LENGTH_QUANTUM != 0 {
            return Err(SignalIoError::EpochLength(expected));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalIoError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            stage,
            epoch_index,
            subject_id: subject_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Samples per epoch at the given rate.
pub fn epoch_len(sample_rate_hz: u32) -> usize {
    (EPOCH_SECONDS * sample_rate_hz) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Edf,
    Csv,
}

impl RecordFormat {
    /// Guess from the file extension (`.edf`/`.rec` vs anything else).
    pub fn from_path(path: &Path) -> RecordFormat {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "edf" || ext == "rec" => RecordFormat::Edf,
            _ => RecordFormat::Csv,
        }
    }
}

impl FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "edf" => Ok(RecordFormat::Edf),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(format!("unknown record format {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Rate every record must have after ingestion.
    pub sample_rate_hz: u32,
    /// Linearly resample records whose native rate differs.
    pub resample: bool,
    /// Subject label; defaults to the file stem.
    pub subject_id: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            resample: false,
            subject_id: None,
        }
    }
}

/// Reads one channel of a recording.
///
/// CSV files carry no rate, so they are taken to be at `opts.sample_rate_hz`.
/// An optional CSV header names the channel; when present it must match
/// `channel`.
pub fn ingest_record(
    path: &Path,
    channel: &str,
    format: RecordFormat,
    opts: &IngestOptions,
) -> Result<RawRecord> {
    if !path.exists() {
        return Err(SignalIoError::FileNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|source| SignalIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let subject_id = opts.subject_id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let (samples, rate, channel_name) = match format {
        RecordFormat::Csv => {
            let parsed = csv::parse_csv(&bytes, path)?;
            if let Some(header) = &parsed.header {
                if header != channel {
                    return Err(SignalIoError::ChannelAbsent {
                        requested: channel.to_string(),
                        available: vec![header.clone()],
                    });
                }
            }
            (parsed.samples, opts.sample_rate_hz, channel.to_string())
        }
        RecordFormat::Edf => {
            let (samples, rate) = edf::read_channel(&bytes, path, channel)?;
            (samples, rate, channel.to_string())
        }
    };

    let samples = if rate == opts.sample_rate_hz {
        samples
    } else if opts.resample {
        resample_linear(&samples, rate, opts.sample_rate_hz)
    } else {
        return Err(SignalIoError::RateMismatch {
            found: rate,
            expected: opts.sample_rate_hz,
        });
    };

    RawRecord::new(samples, opts.sample_rate_hz, channel_name, subject_id)
}

/// Linear interpolation onto a new uniform grid covering the same duration.
pub fn resample_linear(samples: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if samples.is_empty() || from_hz == to_hz {
        return samples.to_vec();
    }
    let out_len = (samples.len() as u64 * to_hz as u64 / from_hz as u64) as usize;
    let ratio = from_hz as f64 / to_hz as f64;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let lo = (t.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = t - lo as f64;
            samples[lo] + (samples[hi] - samples[lo]) * frac
        })
        .collect()
}

/// Parses an annotation file: one token per line. Blank lines are skipped.
pub fn load_annotations(path: &Path) -> Result<Vec<Option<Stage>>> {
    if !path.exists() {
        return Err(SignalIoError::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| SignalIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<Option<Stage>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.trim()))
        .filter(|(_, token)| !token.is_empty())
        .map(|(i, token)| {
            Stage::from_annotation(token).map_err(|()| SignalIoError::UnrecognizedLabel {
                token: token.to_string(),
                line: i + 1,
            })
        })
        .collect()
}

/// Renders stages back into annotation tokens, one per line.
pub fn format_annotations(stages: &[Option<Stage>]) -> String {
    let mut out = String::new();
    for s in stages {
        out.push_str(s.map(Stage::annotation_token).unwrap_or("UNSCORED"));
        out.push('\n');
    }
    out
}

/// Cuts a record into consecutive non-overlapping 30 s epochs.
///
/// The trailing partial window is dropped. Epoch `i` takes annotation `i`;
/// epochs beyond the end of the annotation list are unscored.
pub fn epochize(record: &RawRecord, annotations: Option<&[Option<Stage>]>) -> Result<Vec<Epoch>> {
    let len = epoch_len(record.sample_rate_hz);
    if len % EPOCH_LENGTH_QUANTUM != 0 {
        return Err(SignalIoError::EpochLength(len));
    }
    if record.samples.len() < len {
        return Err(SignalIoError::RecordTooShort {
            len: record.samples.len(),
            epoch_len: len,
        });
    }
    record
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(i, chunk)| {
            let stage = annotations.and_then(|a| a.get(i).copied().flatten());
            Epoch::new(
                chunk.to_vec(),
                record.sample_rate_hz,
                stage,
                i,
                record.subject_id.clone(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: usize) -> RawRecord {
        let samples = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        RawRecord::new(samples, 125, "C4-A1", "s01").unwrap()
    }

    #[test]
    fn remap_merges_s3_s4() {
        let got = parse_annotations("W\nS1\nS2\nS3\nS4\nREM\n").unwrap();
        let want = [Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::N3, Stage::Rem];
        assert_eq!(got, want.map(Some).to_vec());
    }

    #[test]
    fn empty_annotations() {
        assert!(parse_annotations("").unwrap().is_empty());
    }

    #[test]
    fn unknown_label_rejected() {
        let err = parse_annotations("W\nS5\n").unwrap_err();
        assert!(matches!(err, SignalIoError::UnrecognizedLabel { ref token, line: 2 } if token == "S5"));
    }

    #[test]
    fn unscored_is_absent() {
        assert_eq!(parse_annotations("UNSCORED\nW").unwrap(), vec![None, Some(Stage::Wake)]);
    }

    #[test]
    fn remap_idempotent_on_five_stages() {
        for s in Stage::ALL {
            let once = Stage::from_annotation(s.annotation_token()).unwrap().unwrap();
            let twice = Stage::from_annotation(once.annotation_token()).unwrap().unwrap();
            assert_eq!(once, s);
            assert_eq!(twice, once);
        }
    }

    #[test]
    fn epochize_counts() {
        assert_eq!(epochize(&record(7500), None).unwrap().len(), 2);
        let e = epochize(&record(7501), None).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|e| e.len() == 3750));
        assert!(matches!(
            epochize(&record(3000), None),
            Err(SignalIoError::RecordTooShort { len: 3000, epoch_len: 3750 })
        ));
    }

    #[test]
    fn epochize_pairs_annotations() {
        let ann = [Some(Stage::N2), None];
        let e = epochize(&record(3750 * 3), Some(&ann)).unwrap();
        assert_eq!(e[0].stage, Some(Stage::N2));
        assert_eq!(e[1].stage, None);
        assert_eq!(e[2].stage, None);
        assert_eq!(e[2].epoch_index, 2);
    }

    #[test]
    fn epochize_reproduces_prefix() {
        let r = record(3750 * 2 + 17);
        let cat: Vec<f64> = epochize(&r, None)
            .unwrap()
            .iter()
            .flat_map(|e| e.samples().to_vec())
            .collect();
        assert_eq!(&r.samples[..cat.len()], &cat[..]);
    }

    #[test]
    fn record_rejects_nan() {
        assert!(matches!(
            RawRecord::new(vec![0.0, f64::NAN], 125, "c", "s"),
            Err(SignalIoError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn linear_resample_halves_length() {
        let x: Vec<f64> = (0..250).map(|i| i as f64).collect();
        let y = resample_linear(&x, 250, 125);
        assert_eq!(y.len(), 125);
        assert_eq!(y[10], 20.0);
    }
}
