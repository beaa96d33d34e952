//! Front band-pass plus five physiological sub-band filters.

mod design;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::{Epoch, Stage};

pub use self::design::{design_filter, Cascade, FilterKind, FilterSpec, Section, MAX_ORDER};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid edges {low_hz}..{high_hz} Hz (Nyquist {nyquist_hz} Hz)")]
    InvalidEdges {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },
    #[error("filter order {0} not supported (even, 2..={MAX_ORDER})")]
    UnsupportedOrder(usize),
    #[error("non-finite input sample at index {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, FilterError>;

/// The five sub-bands, in feature-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandId {
    Delta,
    Theta,
    Alpha,
    Sigma,
    Beta,
}

impl BandId {
    pub const ALL: [BandId; 5] = [BandId::Delta, BandId::Theta, BandId::Alpha, BandId::Sigma, BandId::Beta];

    /// Nominal (low, high) edges in Hz.
    pub fn edges(self) -> (f64, f64) {
        match self {
            BandId::Delta => (0.0, 4.0),
            BandId::Theta => (4.0, 8.0),
            BandId::Alpha => (8.0, 12.0),
            BandId::Sigma => (12.0, 16.0),
            BandId::Beta => (16.0, 32.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::Delta => "delta",
            BandId::Theta => "theta",
            BandId::Alpha => "alpha",
            BandId::Sigma => "sigma",
            BandId::Beta => "beta",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Delta has a 0 Hz lower edge and is realized as a low-pass.
    pub fn filter_spec(self, order: usize, sample_rate_hz: f64) -> FilterSpec {
        match self.edges() {
            (lo, hi) if lo == 0.0 => FilterSpec::lowpass(order, hi, sample_rate_hz),
            (lo, hi) => FilterSpec::bandpass(order, lo, hi, sample_rate_hz),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBankConfig {
    pub front_low_hz: f64,
    pub front_high_hz: f64,
    pub front_order: usize,
    pub band_order: usize,
    pub sample_rate_hz: f64,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self {
            front_low_hz: 0.5,
            front_high_hz: 35.0,
            front_order: 8,
            band_order: 8,
            sample_rate_hz: 125.0,
        }
    }
}

/// Five filtered copies of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: [Vec<f64>; 5],
    pub epoch_index: usize,
    pub subject_id: String,
    pub stage: Option<Stage>,
}

impl BandSet {
    pub fn new(
        bands: [Vec<f64>; 5],
        epoch_index: usize,
        subject_id: impl Into<String>,
        stage: Option<Stage>,
    ) -> std::result::Result<Self, String> {
        let n = bands[0].len();
        if bands.iter().any(|b| b.len() != n) {
            return Err("band lengths differ".into());
        }
        if bands.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite band value".into());
        }
        Ok(Self {
            bands,
            epoch_index,
            subject_id: subject_id.into(),
            stage,
        })
    }

    pub fn band(&self, id: BandId) -> &[f64] {
        &self.bands[id.index()]
    }

    pub fn len(&self) -> usize {
        self.bands[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands[0].is_empty()
    }
}

/// Steady-state initial conditions of each section for a unit step input.
fn step_initial_conditions(sections: &[Section]) -> Vec<[f64; 2]> {
    let mut level = 1.0;
    sections
        .iter()
        .map(|s| {
            let gain = s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
            let y = gain;
            let z2 = s.b[2] - s.a[2] * y;
            let z1 = s.b[1] - s.a[1] * y + z2;
            let zi = [z1 * level, z2 * level];
            level *= gain;
            zi
        })
        .collect()
}

/// Single forward pass, transposed direct form II per section.
fn run_sections(sections: &[Section], zi: &[[f64; 2]], x: &mut [f64]) {
    let x0 = x.first().copied().unwrap_or(0.0);
    for (s, z) in sections.iter().zip(zi) {
        let (mut z1, mut z2) = (z[0] * x0, z[1] * x0);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + z1;
            z1 = s.b[1] * input - s.a[1] * y + z2;
            z2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
    }
}

/// Zero-phase (forward-backward) filtering.
///
/// The input is extended at both ends by an odd reflection of `3 * order`
/// samples and each pass starts from step-response steady state, which keeps
/// edge transients short.
pub fn apply_filter(cascade: &Cascade, samples: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(FilterError::NonFinite(i));
    }
    let n = samples.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let pad = (3 * cascade.spec.order).min(n - 1);
    let (first, last) = (samples[0], samples[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - samples[i]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|i| 2.0 * last - samples[n - 1 - i]));

    let zi = step_initial_conditions(&cascade.sections);
    run_sections(&cascade.sections, &zi, &mut ext);
    ext.reverse();
    run_sections(&cascade.sections, &zi, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Designed front filter plus the five band filters.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub config: FilterBankConfig,
    pub front: Cascade,
    pub bands: [Cascade; 5],
}

impl FilterBank {
    pub fn new(config: FilterBankConfig) -> Result<Self> {
        let front = design_filter(&FilterSpec::bandpass(
            config.front_order,
            config.front_low_hz,
            config.front_high_hz,
            config.sample_rate_hz,
        ))?;
        let bands = [
            design_filter(&BandId::Delta.filter_spec(config.band_order, config.sample_rate_hz))?,
            design_filter(&BandId::Theta.filter_spec(config.band_order, config.sample_rate_hz))?,
            design_filter(&BandId::Alpha.filter_spec(config.band_order, config.sample_rate_hz))?,
            design_filter(&BandId::Sigma.filter_spec(config.band_order, config.sample_rate_hz))?,
            design_filter(&BandId::Beta.filter_spec(config.band_order, config.sample_rate_hz))?,
        ];
        Ok(Self { config, front, bands })
    }

    pub fn cascade(&self, band: BandId) -> &Cascade {
        &self.bands[band.index()]
    }

    /// Front band-pass once, then every band filter on the band-passed signal.
    pub fn decompose(&self, epoch: &Epoch) -> Result<BandSet> {
        let base = apply_filter(&self.front, epoch.samples())?;
        let mut out: [Vec<f64>; 5] = Default::default();
        for (slot, cascade) in out.iter_mut().zip(&self.bands) {
            *slot = apply_filter(cascade, &base)?;
        }
        Ok(BandSet {
            bands: out,
            epoch_index: epoch.epoch_index,
            subject_id: epoch.subject_id.clone(),
            stage: epoch.stage,
        })
    }

    /// [`FilterBank::decompose`] over many epochs in parallel, keeping order.
    pub fn decompose_all(&self, epochs: &[Epoch]) -> Result<Vec<BandSet>> {
        epochs.par_iter().map(|e| self.decompose(e)).collect()
    }

    /// Coefficient dump of all six filters, each preceded by a `# name` line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# front {:?}\n", self.front.spec);
        out.push_str(&self.front.to_text());
        for b in BandId::ALL {
            out.push_str(&format!("# {} {:?}\n", b.name(), self.cascade(b).spec));
            out.push_str(&self.cascade(b).to_text());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / 125.0).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn zero_in_zero_out() {
        let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
        let y = apply_filter(&bank.front, &[0.0; 500]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_finite() {
        let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
        assert_eq!(
            apply_filter(&bank.front, &[0.0, f64::INFINITY]),
            Err(FilterError::NonFinite(1))
        );
    }

    #[test]
    fn alpha_passes_ten_hz_delta_blocks_it() {
        let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
        let x = sine(10.0, 3750);
        let trim = 250;
        let alpha = apply_filter(bank.cascade(BandId::Alpha), &x).unwrap();
        let delta = apply_filter(bank.cascade(BandId::Delta), &x).unwrap();
        let r_in = rms(&x[trim..3750 - trim]);
        assert!(rms(&alpha[trim..3750 - trim]) >= 0.9 * r_in);
        assert!(rms(&delta[trim..3750 - trim]) <= 0.05 * r_in);
    }

    #[test]
    fn length_preserved_for_short_input() {
        let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
        assert_eq!(apply_filter(&bank.front, &[1.0, 2.0, 3.0]).unwrap().len(), 3);
        assert_eq!(apply_filter(&bank.front, &[1.0]).unwrap().len(), 1);
    }

    #[test]
    fn step_conditions_remove_dc_transient_of_lowpass() {
        let lp = design_filter(&FilterSpec::lowpass(8, 4.0, 125.0)).unwrap();
        let y = apply_filter(&lp, &[3.0; 400]).unwrap();
        assert!(y.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }
}
