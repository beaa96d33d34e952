//! Digital Butterworth design through the analog zero-pole-gain route:
//! prototype poles, frequency transformation, bilinear transform, then
//! pairing into second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FilterError, Result};

pub const MAX_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Bandpass,
    Lowpass,
}

/// Order is the total filter order (number of poles) for both kinds, so an
/// 8th-order band-pass has four sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: FilterKind::Bandpass,
            order,
            low_hz,
            high_hz,
            sample_rate_hz,
        }
    }

    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: FilterKind::Lowpass,
            order,
            low_hz: 0.0,
            high_hz: cutoff_hz,
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        let edges_ok = match self.kind {
            FilterKind::Lowpass => self.low_hz == 0.0 && self.high_hz > 0.0,
            FilterKind::Bandpass => self.low_hz > 0.0 && self.low_hz < self.high_hz,
        };
        if !(self.sample_rate_hz > 0.0) || !edges_ok || !(self.high_hz < nyquist) {
            return Err(FilterError::InvalidEdges {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                nyquist_hz: nyquist,
            });
        }
        let min_order = 2;
        if self.order < min_order || self.order % 2 != 0 || self.order > MAX_ORDER {
            return Err(FilterError::UnsupportedOrder(self.order));
        }
        Ok(())
    }
}

/// One biquad, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }
}

/// A designed filter as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub spec: FilterSpec,
    pub sections: Vec<Section>,
}

impl Cascade {
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }

    /// Complex response of one pass at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.spec.sample_rate_hz;
        self.sections.iter().map(|s| s.response(w)).product()
    }

    /// Text dump, one section per line: `b0 b1 b2 a1 a2`.
    pub fn to_text(&self) -> String {
        self.sections
            .iter()
            .map(|s| format!("{:e} {:e} {:e} {:e} {:e}\n", s.b[0], s.b[1], s.b[2], s.a[1], s.a[2]))
            .collect()
    }
}

fn prototype_poles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(p: Complex64, fs2: f64) -> Complex64 {
    (fs2 + p) / (fs2 - p)
}

/// Pairs conjugates; leftover real poles are paired among themselves.
fn pair_poles(poles: &[Complex64]) -> Vec<[Complex64; 2]> {
    const EPS: f64 = 1e-12;
    let mut pairs: Vec<[Complex64; 2]> = poles
        .iter()
        .filter(|p| p.im > EPS)
        .map(|&p| [p, p.conj()])
        .collect();
    let mut reals: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= EPS).map(|p| p.re).collect();
    reals.sort_by(|a, b| a.total_cmp(b));
    for r in reals.chunks(2) {
        let second = r.get(1).copied().unwrap_or(0.0);
        pairs.push([Complex64::new(r[0], 0.0), Complex64::new(second, 0.0)]);
    }
    // Poles nearest the unit circle last, so the high-Q sections see
    // already-attenuated signal.
    pairs.sort_by(|x, y| x[0].norm().total_cmp(&y[0].norm()));
    pairs
}

pub fn design_filter(spec: &FilterSpec) -> Result<Cascade> {
    spec.validate()?;
    let fs = spec.sample_rate_hz;
    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();

    let (digital_poles, zeros, reference_w): (Vec<Complex64>, [f64; 3], f64) = match spec.kind {
        FilterKind::Lowpass => {
            let wc = warp(spec.high_hz);
            let poles = prototype_poles(spec.order)
                .into_iter()
                .map(|p| bilinear(p * wc, fs2))
                .collect();
            // Both zeros at z = -1.
            (poles, [1.0, 2.0, 1.0], 0.0)
        }
        FilterKind::Bandpass => {
            let w1 = warp(spec.low_hz);
            let w2 = warp(spec.high_hz);
            let bw = w2 - w1;
            let w0 = (w1 * w2).sqrt();
            let poles = prototype_poles(spec.order / 2)
                .into_iter()
                .flat_map(|p| {
                    let p = p * (bw / 2.0);
                    let root = (p * p - w0 * w0).sqrt();
                    [p + root, p - root]
                })
                .map(|p| bilinear(p, fs2))
                .collect();
            // One zero at z = 1 (from s = 0) and one at z = -1 per section.
            let center = 2.0 * (w0 / fs2).atan();
            (poles, [1.0, 0.0, -1.0], center)
        }
    };

    let sections = pair_poles(&digital_poles)
        .into_iter()
        .map(|[p, q]| {
            let a = [1.0, -(p + q).re, (p * q).re];
            let mut s = Section { b: zeros, a };
            // The analog prototype has unit gain at the reference frequency and
            // the bilinear map preserves it, so each section is scaled to unity there.
            let g = s.response(reference_w).norm();
            s.b.iter_mut().for_each(|c| *c /= g);
            s
        })
        .collect();

    Ok(Cascade {
        spec: *spec,
        sections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_counts() {
        let bp = design_filter(&FilterSpec::bandpass(8, 0.5, 35.0, 125.0)).unwrap();
        assert_eq!(bp.sections.len(), 4);
        let lp = design_filter(&FilterSpec::lowpass(8, 4.0, 125.0)).unwrap();
        assert_eq!(lp.sections.len(), 4);
        assert!(bp.is_stable() && lp.is_stable());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            design_filter(&FilterSpec::bandpass(8, 0.5, 70.0, 125.0)),
            Err(FilterError::InvalidEdges { .. })
        ));
        assert!(matches!(
            design_filter(&FilterSpec::bandpass(8, 10.0, 5.0, 125.0)),
            Err(FilterError::InvalidEdges { .. })
        ));
        assert!(matches!(
            design_filter(&FilterSpec::lowpass(7, 4.0, 125.0)),
            Err(FilterError::UnsupportedOrder(7))
        ));
        assert!(matches!(
            design_filter(&FilterSpec::lowpass(0, 4.0, 125.0)),
            Err(FilterError::UnsupportedOrder(0))
        ));
    }

    #[test]
    fn half_power_at_edges() {
        let bp = design_filter(&FilterSpec::bandpass(8, 4.0, 8.0, 125.0)).unwrap();
        for f in [4.0, 8.0] {
            let g = bp.response(f).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{f}: {g}");
        }
        let lp = design_filter(&FilterSpec::lowpass(8, 4.0, 125.0)).unwrap();
        assert!((lp.response(4.0).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((lp.response(0.0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_dump_has_one_line_per_section() {
        let lp = design_filter(&FilterSpec::lowpass(8, 4.0, 125.0)).unwrap();
        let text = lp.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 5));
    }
}
