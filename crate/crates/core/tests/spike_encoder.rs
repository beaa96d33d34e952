use proptest::prelude::*;
use spikestage::filterbank::{BandId, BandSet};
use spikestage::spike_encoder::*;

fn band_set(delta: Vec<f64>) -> BandSet {
    let n = delta.len();
    BandSet::new([delta, vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], 0, "s", None).unwrap()
}

fn pulse_at(start: usize, len: usize) -> Vec<f64> {
    let mut x = vec![0.0; 3750];
    let mid = len / 2;
    for i in 0..=len {
        x[start + i] = (mid as f64 - (i as f64 - mid as f64).abs()) * 4.0;
    }
    x
}

#[test]
fn triangular_pulse_lands_in_its_window() {
    let bands = band_set(pulse_at(1000, 10));
    let fe = build_feature_epoch(&bands, &HalfGaussianParams::default(), 25).unwrap();
    assert_eq!(fe.shape(), (150, 10));
    let col = column_index(BandId::Delta, Polarity::Peak);
    for r in 0..150 {
        for c in 0..10 {
            let v = fe.get(r, c);
            if v != 0.0 {
                assert!(c == col && (40..=41).contains(&r), "unexpected value {v} at ({r}, {c})");
            }
        }
    }
    // one spike with standardized amplitude 1 -> exp(-2)
    assert!((fe.get(40, col) as f64 - (-2.0f64).exp()).abs() < 1e-7);
}

#[test]
fn zero_band_set_gives_zero_matrix() {
    let fe = build_feature_epoch(&band_set(vec![0.0; 3750]), &HalfGaussianParams::default(), 25).unwrap();
    assert_eq!(fe.shape(), (150, 10));
    assert!(fe.data().iter().all(|&v| v == 0.0));
}

fn pulse_train() -> Vec<f64> {
    // triangles of varying height every 40 samples
    let mut x = vec![0.0; 3750];
    for (k, start) in (10..3700).step_by(40).enumerate() {
        let h = 1.0 + (k % 7) as f64;
        for i in 0..=10usize {
            x[start + i] = h * (5.0 - (i as f64 - 5.0).abs());
        }
    }
    x
}

#[test]
fn threshold_support_is_subset_of_half_gaussian_support() {
    let bands = band_set(pulse_train());
    let hg = build_feature_epoch(&bands, &HalfGaussianParams::default(), 25).unwrap();
    let th = build_feature_epoch_threshold(&bands, 0.5, 125, 25).unwrap();
    let mut th_rows = 0;
    for r in 0..150 {
        for c in 0..10 {
            if th.get(r, c) != 0.0 {
                th_rows += 1;
                assert!(hg.get(r, c) != 0.0, "({r}, {c})");
            }
        }
    }
    assert!(th_rows > 0);
}

#[test]
fn cutoff_extremes() {
    let x = pulse_train();
    let mask = encode(&x, BandId::Delta, Polarity::Peak).unwrap();
    let z = standardize(&x, &mask.mask, 125);

    let top = threshold_gate(&x, &mask, 1.0, 125).unwrap();
    for (i, &w) in top.weighted.iter().enumerate() {
        if w != 0.0 {
            assert_eq!(w, 1.0, "{i}");
        }
    }
    for win in 0..30 {
        let range = win * 125..(win + 1) * 125;
        let has_spike = range.clone().any(|i| mask.mask[i]);
        let survivors = range.filter(|&i| top.weighted[i] != 0.0).count();
        assert_eq!(survivors > 0, has_spike, "window {win}");
    }

    let all = threshold_gate(&x, &mask, 1e-12, 125).unwrap();
    for i in 0..x.len() {
        assert_eq!(all.weighted[i], if mask.mask[i] { z[i] } else { 0.0 });
    }
}

#[test]
fn weighting_reverses_order_of_large_amplitudes() {
    let p = HalfGaussianParams::default();
    // brute force f(z) * z with sigma = 0.5, unit peak
    let brute = |z: f64| z * (-z * z / (2.0 * 0.25)).exp();
    let (a, b) = (half_gaussian(0.5, &p).unwrap() * 0.5, half_gaussian(1.0, &p).unwrap() * 1.0);
    assert!((a - brute(0.5)).abs() < 1e-15 && (b - brute(1.0)).abs() < 1e-15);
    assert!(a > b);

    // the same through probabilitize: window max 1.0 and a spike at half of it
    let mut x = vec![0.0; 125];
    x[20] = 2.0;
    x[60] = 4.0;
    x[19] = 1.0;
    x[21] = 1.0;
    x[59] = 2.0;
    x[61] = 2.0;
    let mask = encode(&x, BandId::Alpha, Polarity::Peak).unwrap();
    let t = probabilitize(&x, &mask, &p).unwrap();
    assert!((t.weighted[20] - brute(0.5)).abs() < 1e-15);
    assert!((t.weighted[60] - brute(1.0)).abs() < 1e-15);
}

fn brute_mask(x: &[f64], peak: bool) -> Vec<bool> {
    let mut m = vec![false; x.len()];
    for i in 1..x.len().saturating_sub(1) {
        m[i] = if peak {
            x[i] > x[i - 1] && x[i] >= x[i + 1]
        } else {
            x[i] < x[i - 1] && x[i] <= x[i + 1]
        };
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn extrema_match_neighbor_scan(x in prop::collection::vec(-4i32..4, 3..300)) {
        // small integers force plenty of plateaus
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        for (pol, peak) in [(Polarity::Peak, true), (Polarity::Trough, false)] {
            let m = encode(&x, BandId::Theta, pol).unwrap();
            prop_assert_eq!(m.mask, brute_mask(&x, peak));
        }
    }

    #[test]
    fn standardized_values_in_unit_interval(x in prop::collection::vec(-100.0f64..100.0, 3..600)) {
        let m = encode(&x, BandId::Sigma, Polarity::Trough).unwrap();
        let z = standardize(&x, &m.mask, 125);
        prop_assert!(z.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(z.iter().zip(&m.mask).all(|(&v, &k)| k || v == 0.0));
    }

    #[test]
    fn weights_are_bounded(x in prop::collection::vec(-100.0f64..100.0, 3..600)) {
        // z * exp(-2 z^2) peaks at z = 0.5
        let bound = 0.5 * (-0.5f64).exp() + 1e-15;
        let m = encode(&x, BandId::Beta, Polarity::Peak).unwrap();
        let t = probabilitize(&x, &m, &HalfGaussianParams::default()).unwrap();
        prop_assert!(t.weighted.iter().all(|&w| (0.0..=bound).contains(&w)));
    }

    #[test]
    fn accumulation_conserves_mass(w in prop::collection::vec(0.0f64..2.0, 1..40usize).prop_flat_map(|v| {
        let n = v.len() * 25;
        prop::collection::vec(0.0f64..2.0, n)
    })) {
        let a = accumulate(&w, 25).unwrap();
        prop_assert_eq!(a.len(), w.len() / 25);
        let (sa, sw): (f64, f64) = (a.iter().sum(), w.iter().sum());
        prop_assert!((sa - sw).abs() <= 1e-12 * sw.max(1.0));
    }

    #[test]
    fn feature_file_round_trip(rows in 1usize..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..rows * 10).map(|_| rng.gen_range(0.0f32..10.0)).collect();
        let fe = FeatureEpoch::new(data, rows, None, 3, "x").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_feature_file(&dir.path().join("f"), &fe, &EncoderConfig::default()).unwrap();
        let (back, meta) = read_feature_file(&path).unwrap();
        prop_assert_eq!(back, fe);
        prop_assert_eq!(meta.rows, rows);
    }
}
