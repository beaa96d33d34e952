use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use spikestage::filterbank::*;
use spikestage::signal_io::Epoch;

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// |B(z)/A(z)| at `f` from the fully expanded polynomials, evaluated by Horner in z^-1.
fn oracle_gain(c: &Cascade, f: f64) -> f64 {
    let (mut num, mut den) = (vec![1.0], vec![1.0]);
    for s in &c.sections {
        num = poly_mul(&num, &s.b);
        den = poly_mul(&den, &[1.0, s.a[1], s.a[2]]);
    }
    let zinv = Complex64::from_polar(1.0, -2.0 * PI * f / c.spec.sample_rate_hz);
    let horner = |p: &[f64]| p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * zinv + k);
    (horner(&num) / horner(&den)).norm()
}

fn db(g: f64) -> f64 {
    20.0 * g.log10()
}

#[test]
fn front_filter_passes_mid_band() {
    let c = design_filter(&FilterSpec::bandpass(8, 0.5, 35.0, 125.0)).unwrap();
    assert!(c.is_stable());
    assert_eq!(c.sections.len(), 4);
    let g = oracle_gain(&c, 17.0);
    assert!(db(g).abs() < 1.0, "{} dB", db(g));
    assert!((g - c.response(17.0).norm()).abs() < 1e-9);
}

#[test]
fn delta_lowpass_stops_octave() {
    let c = design_filter(&BandId::Delta.filter_spec(8, 125.0)).unwrap();
    assert!(db(oracle_gain(&c, 8.0)) <= -40.0);
}

#[test]
fn oracle_agrees_with_cascade_on_grid() {
    for band in BandId::ALL {
        let c = design_filter(&band.filter_spec(8, 125.0)).unwrap();
        for k in 1..124 {
            let f = k as f64 * 0.5;
            let (a, b) = (oracle_gain(&c, f), c.response(f).norm());
            // The expanded polynomials of the 4 Hz low-pass have poles clustered
            // near z = 1 and lose ~8 digits; 1e-6 relative is ~1e-5 dB.
            assert!((a - b).abs() <= 1e-6 * a.max(1e-6), "{band:?} at {f}: {a} vs {b}");
        }
    }
}

#[test]
fn edges_above_nyquist_rejected() {
    let err = design_filter(&FilterSpec::bandpass(8, 0.5, 70.0, 125.0)).unwrap_err();
    assert!(matches!(err, FilterError::InvalidEdges { .. }), "{err:?}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn two_tone_mixture_separates() {
    let t = |i: usize| i as f64 / 125.0;
    let slow: Vec<f64> = (0..3750).map(|i| 30.0 * (2.0 * PI * 2.0 * t(i)).sin()).collect();
    let fast: Vec<f64> = (0..3750).map(|i| 10.0 * (2.0 * PI * 20.0 * t(i)).sin()).collect();
    let mix: Vec<f64> = slow.iter().zip(&fast).map(|(a, b)| a + b).collect();
    let epoch = Epoch::new(mix, 125, None, 0, "s").unwrap();
    let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
    let bands = bank.decompose(&epoch).unwrap();
    let r_delta = pearson(bands.band(BandId::Delta), &slow);
    let r_beta = pearson(bands.band(BandId::Beta), &fast);
    assert!(r_delta > 0.95, "{r_delta}");
    assert!(r_beta > 0.95, "{r_beta}");
    let total: usize = BandId::ALL.iter().map(|&b| bands.band(b).len()).sum();
    assert_eq!(total, 5 * 3750);
}

#[test]
fn zero_epoch_gives_zero_bands() {
    let bank = FilterBank::new(FilterBankConfig::default()).unwrap();
    let bands = bank.decompose(&Epoch::new(vec![0.0; 3750], 125, None, 0, "s").unwrap()).unwrap();
    assert!(BandId::ALL.iter().all(|&b| bands.band(b).iter().all(|&v| v == 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn filtering_is_linear(seed in any::<u64>(), scale in -5.0f64..5.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..600).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let y: Vec<f64> = (0..600).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let c = design_filter(&BandId::Sigma.filter_spec(8, 125.0)).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| scale * a + b).collect();
        let lhs = apply_filter(&c, &combo).unwrap();
        let fx = apply_filter(&c, &x).unwrap();
        let fy = apply_filter(&c, &y).unwrap();
        for i in 0..600 {
            let rhs = scale * fx[i] + fy[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn valid_even_orders_are_stable(half in 1usize..=8, lo in 0.5f64..20.0, width in 2.0f64..30.0) {
        let hi = (lo + width).min(60.0);
        let c = design_filter(&FilterSpec::bandpass(2 * half, lo, hi, 125.0)).unwrap();
        prop_assert!(c.is_stable());
        prop_assert_eq!(c.sections.len(), half);
    }
}
