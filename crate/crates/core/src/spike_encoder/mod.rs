//! Adaptive spike-train encoding of band-filtered EEG.
//!
//! Per band and polarity the pipeline is:
//!
//! ```text
//! band signal x ──encode──▶ mask y ──probabilitize──▶ z' = f(z)·z ──accumulate──▶ a
//! ```
//!
//! where `z` is the extremum magnitude `|x|` divided by the largest marked
//! magnitude in its `window_size`-sample standardization window and `f` is the
//! half-Gaussian density with location 0. Five bands times two polarities give
//! the ten columns of a [`FeatureEpoch`].

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filterbank::{BandId, BandSet};
use crate::signal_io::Stage;

pub use self::io::{read_feature_file, write_feature_file, FeatureMeta};

pub const NUM_COLUMNS: usize = 10;
pub const DEFAULT_ACCUMULATION_WIDTH: usize = 25;
pub const DEFAULT_ABLATION_CUTOFF: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("signal too short: {0} samples (need at least 3)")]
    TooShort(usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("negative amplitude {0}")]
    NegativeAmplitude(f64),
    #[error("length mismatch: signal {signal}, mask {mask}")]
    LengthMismatch { signal: usize, mask: usize },
    #[error("length {len} is not divisible by accumulation width {width}")]
    NotDivisible { len: usize, width: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cutoff {0} outside (0, 1]")]
    CutoffOutOfRange(f64),
    #[error("feature file {path}: {reason}")]
    FeatureFile { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Peak,
    Trough,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Peak, Polarity::Trough];

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Peak => "peak",
            Polarity::Trough => "trough",
        }
    }
}

/// Feature column index of `(band, polarity)`: band-major, peak before trough.
pub fn column_index(band: BandId, polarity: Polarity) -> usize {
    band.index() * 2 + polarity as usize
}

/// Column names in storage order, e.g. `delta_peak`.
pub fn column_names() -> Vec<String> {
    BandId::ALL
        .iter()
        .flat_map(|b| Polarity::ALL.iter().map(move |p| format!("{}_{}", b.name(), p.name())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeMask {
    pub band: BandId,
    pub polarity: Polarity,
    pub mask: Vec<bool>,
}

impl SpikeMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    pub band: BandId,
    pub polarity: Polarity,
    pub weighted: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfGaussianParams {
    /// Location. Only 0 is supported.
    pub mu: f64,
    pub sigma: f64,
    /// Standardization window in samples.
    pub window_size: usize,
    /// Divide the density by its value at 0 so weights fall in (0, 1].
    pub normalize_to_unit_peak: bool,
}

impl Default for HalfGaussianParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.5,
            window_size: 125,
            normalize_to_unit_peak: true,
        }
    }
}

impl HalfGaussianParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu != 0.0 {
            return Err(EncoderError::InvalidParams(format!("mu must be 0, got {}", self.mu)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EncoderError::InvalidParams(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.window_size == 0 {
            return Err(EncoderError::InvalidParams("window_size must be positive".into()));
        }
        Ok(())
    }
}

/// Which weighting the encoder applies after standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arm", rename_all = "snake_case")]
pub enum EncoderArm {
    HalfGaussian,
    /// Hard gate at a fraction of the window maximum (ablation).
    Threshold { cutoff: f64 },
}

impl EncoderArm {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderArm::HalfGaussian => "half_gaussian",
            EncoderArm::Threshold { .. } => "threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub params: HalfGaussianParams,
    pub accumulation_width: usize,
    pub arm: EncoderArm,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            params: HalfGaussianParams::default(),
            accumulation_width: DEFAULT_ACCUMULATION_WIDTH,
            arm: EncoderArm::HalfGaussian,
        }
    }
}

impl EncoderConfig {
    pub fn encode(&self, bands: &BandSet) -> Result<FeatureEpoch> {
        match self.arm {
            EncoderArm::HalfGaussian => build_feature_epoch(bands, &self.params, self.accumulation_width),
            EncoderArm::Threshold { cutoff } => build_feature_epoch_threshold(
                bands,
                cutoff,
                self.params.window_size,
                self.accumulation_width,
            ),
        }
    }
}

/// Accumulated `T x 10` feature matrix of one epoch, stored row-major as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEpoch {
    data: Vec<f32>,
    rows: usize,
    pub stage: Option<Stage>,
    pub epoch_index: usize,
    pub subject_id: String,
}

impl FeatureEpoch {
    pub fn new(
        data: Vec<f32>,
        rows: usize,
        stage: Option<Stage>,
        epoch_index: usize,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if data.len() != rows * NUM_COLUMNS {
            return Err(EncoderError::InvalidParams(format!(
                "feature data has {} values, expected {rows} x {NUM_COLUMNS}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(EncoderError::InvalidParams(format!("feature value {v} not finite and non-negative")));
        }
        Ok(Self {
            data,
            rows,
            stage,
            epoch_index,
            subject_id: subject_id.into(),
        })
    }

    pub fn zeros(rows: usize) -> Self {
        Self {
            data: vec![0.0; rows * NUM_COLUMNS],
            rows,
            stage: None,
            epoch_index: 0,
            subject_id: String::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, NUM_COLUMNS)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * NUM_COLUMNS + col]
    }

    pub fn column(&self, col: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }
}

/// Marks local extrema by sign changes of the first difference.
///
/// With `d_i = x[i+1] - x[i]`, interior index `i` is a peak when
/// `d_{i-1} > 0 && d_i <= 0` and a trough when `d_{i-1} < 0 && d_i >= 0`. A flat
/// run therefore only marks its first sample, and only after a strict rise
/// (peak) or fall (trough); a constant signal marks nothing.
pub fn encode(signal: &[f64], band: BandId, polarity: Polarity) -> Result<SpikeMask> {
    let n = signal.len();
    if n < 3 {
        return Err(EncoderError::TooShort(n));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(EncoderError::NonFinite(i));
    }
    let mut mask = vec![false; n];
    for (i, w) in signal.windows(3).enumerate() {
        let before = w[1] - w[0];
        let after = w[2] - w[1];
        mask[i + 1] = match polarity {
            Polarity::Peak => before > 0.0 && after <= 0.0,
            Polarity::Trough => before < 0.0 && after >= 0.0,
        };
    }
    Ok(SpikeMask { band, polarity, mask })
}

/// Half-Gaussian weight of a non-negative amplitude.
pub fn half_gaussian(z: f64, params: &HalfGaussianParams) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return Err(EncoderError::NegativeAmplitude(z));
    }
    Ok(half_gaussian_unchecked(z, params))
}

fn half_gaussian_unchecked(z: f64, params: &HalfGaussianParams) -> f64 {
    let s = params.sigma;
    let shape = (-(z * z) / (2.0 * s * s)).exp();
    if params.normalize_to_unit_peak {
        shape
    } else {
        std::f64::consts::SQRT_2 / (s * std::f64::consts::PI.sqrt()) * shape
    }
}

/// Marked magnitudes divided by the per-window maximum marked magnitude.
/// Unmarked positions, and windows without any nonzero spike, are zero.
pub fn standardize(signal: &[f64], mask: &[bool], window_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for ((xs, ms), zs) in signal
        .chunks(window_size)
        .zip(mask.chunks(window_size))
        .zip(out.chunks_mut(window_size))
    {
        let peak = xs
            .iter()
            .zip(ms)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x.abs())
            .fold(0.0, f64::max);
        if peak > 0.0 {
            for ((x, &m), z) in xs.iter().zip(ms).zip(zs.iter_mut()) {
                if m {
                    *z = x.abs() / peak;
                }
            }
        }
    }
    out
}

fn check_lengths(signal: &[f64], mask: &SpikeMask) -> Result<()> {
    if signal.len() != mask.mask.len() {
        return Err(EncoderError::LengthMismatch {
            signal: signal.len(),
            mask: mask.mask.len(),
        });
    }
    Ok(())
}

/// Weights each standardized extremum magnitude by its half-Gaussian density.
pub fn probabilitize(signal: &[f64], mask: &SpikeMask, params: &HalfGaussianParams) -> Result<SpikeTrain> {
    params.validate()?;
    check_lengths(signal, mask)?;
    let z = standardize(signal, &mask.mask, params.window_size);
    let weighted = z
        .into_iter()
        .zip(&mask.mask)
        .map(|(z, &m)| if m { half_gaussian_unchecked(z, params) * z } else { 0.0 })
        .collect();
    Ok(SpikeTrain {
        band: mask.band,
        polarity: mask.polarity,
        weighted,
    })
}

/// Ablation counterpart of [`probabilitize`]: standardized magnitudes at or
/// above `cutoff` pass unweighted, the rest are dropped.
pub fn threshold_gate(signal: &[f64], mask: &SpikeMask, cutoff: f64, window_size: usize) -> Result<SpikeTrain> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(EncoderError::CutoffOutOfRange(cutoff));
    }
    if window_size == 0 {
        return Err(EncoderError::InvalidParams("window_size must be positive".into()));
    }
    check_lengths(signal, mask)?;
    let weighted = standardize(signal, &mask.mask, window_size)
        .into_iter()
        .map(|z| if z >= cutoff { z } else { 0.0 })
        .collect();
    Ok(SpikeTrain {
        band: mask.band,
        polarity: mask.polarity,
        weighted,
    })
}

/// Sums over consecutive non-overlapping windows of `width` samples.
pub fn accumulate(weighted: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || weighted.len() % width != 0 {
        return Err(EncoderError::NotDivisible {
            len: weighted.len(),
            width,
        });
    }
    Ok(weighted.chunks_exact(width).map(|w| w.iter().sum()).collect())
}

fn assemble<F>(bands: &BandSet, width: usize, mut weigh: F) -> Result<FeatureEpoch>
where
    F: FnMut(&[f64], &SpikeMask) -> Result<SpikeTrain>,
{
    let n = bands.len();
    if width == 0 || n % width != 0 {
        return Err(EncoderError::NotDivisible { len: n, width });
    }
    let rows = n / width;
    let mut data = vec![0.0f32; rows * NUM_COLUMNS];
    for band in BandId::ALL {
        let signal = bands.band(band);
        for polarity in Polarity::ALL {
            let mask = encode(signal, band, polarity)?;
            let train = weigh(signal, &mask)?;
            let acc = accumulate(&train.weighted, width)?;
            let col = column_index(band, polarity);
            for (r, v) in acc.into_iter().enumerate() {
                data[r * NUM_COLUMNS + col] = v as f32;
            }
        }
    }
    FeatureEpoch::new(data, rows, bands.stage, bands.epoch_index, bands.subject_id.clone())
}

/// Encode, probabilitize and accumulate all ten band/polarity sequences.
pub fn build_feature_epoch(bands: &BandSet, params: &HalfGaussianParams, width: usize) -> Result<FeatureEpoch> {
    params.validate()?;
    assemble(bands, width, |signal, mask| probabilitize(signal, mask, params))
}

/// Same pipeline with the half-Gaussian weighting replaced by a fixed cut-off.
pub fn build_feature_epoch_threshold(
    bands: &BandSet,
    cutoff: f64,
    window_size: usize,
    width: usize,
) -> Result<FeatureEpoch> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(EncoderError::CutoffOutOfRange(cutoff));
    }
    assemble(bands, width, |signal, mask| threshold_gate(signal, mask, cutoff, window_size))
}
