//! Deterministic synthetic EEG with stage-dependent spectral content.
//!
//! Each epoch is one constant-amplitude sinusoid drawn from the stage's
//! dominant band plus white Gaussian background noise:
//!
//! | stage | dominant band |
//! |-------|---------------|
//! | Wake  | beta 16–32 Hz |
//! | N1    | theta 4–8 Hz  |
//! | N2    | sigma 12–16 Hz, plus optional K-complex-like bursts |
//! | N3    | delta 0.5–4 Hz |
//! | REM   | alpha 8–12 Hz |

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{epoch_len, RawRecord, Result, SignalIoError, Stage, DEFAULT_SAMPLE_RATE_HZ};

/// Declarative description of a synthetic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    /// Stage of each epoch, in order. Shared by every subject.
    pub stages: Vec<Stage>,
    pub subjects: usize,
    /// Standard deviation of the white background noise, in microvolts.
    pub noise_uv: f64,
    /// Nominal peak amplitude of the dominant-band sinusoid, in microvolts.
    pub amplitude_uv: f64,
    /// Inject K-complex-like transients into N2 epochs.
    pub kcomplex: bool,
    pub sample_rate_hz: u32,
    pub channel: String,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            stages: Vec::new(),
            subjects: 1,
            noise_uv: 5.0,
            amplitude_uv: 20.0,
            kcomplex: true,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            channel: "C4-A1".into(),
            seed: 0,
        }
    }
}

impl SyntheticScenario {
    /// `per_stage` consecutive epochs of each of the five stages, repeated
    /// `cycles` times with the stage order rotated each cycle.
    pub fn balanced(per_stage: usize, cycles: usize, subjects: usize, seed: u64) -> Self {
        let mut stages = Vec::with_capacity(per_stage * 5 * cycles);
        for c in 0..cycles {
            for k in 0..5 {
                let s = Stage::ALL[(k + c) % 5];
                stages.extend(std::iter::repeat(s).take(per_stage));
            }
        }
        Self {
            stages,
            subjects,
            seed,
            ..Self::default()
        }
    }

    /// Parses `key = value` lines. `#` starts a comment.
    ///
    /// Keys: `stages` (space/comma separated, `N3*5` repeats), `subjects`,
    /// `noise_uv`, `amplitude_uv`, `kcomplex`, `sample_rate_hz`, `channel`, `seed`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Self::default();
        let mut saw_stages = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SignalIoError::Scenario(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| SignalIoError::Scenario(format!("line {}: invalid {what} {value:?}", lineno + 1));
            match key {
                "stages" => {
                    sc.stages = parse_stage_list(value).map_err(|e| {
                        SignalIoError::Scenario(format!("line {}: {e}", lineno + 1))
                    })?;
                    saw_stages = true;
                }
                "subjects" => sc.subjects = value.parse().map_err(|_| bad("subjects"))?,
                "noise_uv" => sc.noise_uv = value.parse().map_err(|_| bad("noise_uv"))?,
                "amplitude_uv" => sc.amplitude_uv = value.parse().map_err(|_| bad("amplitude_uv"))?,
                "kcomplex" => sc.kcomplex = value.parse().map_err(|_| bad("kcomplex"))?,
                "sample_rate_hz" => sc.sample_rate_hz = value.parse().map_err(|_| bad("sample_rate_hz"))?,
                "channel" => sc.channel = value.to_string(),
                "seed" => sc.seed = value.parse().map_err(|_| bad("seed"))?,
                other => {
                    return Err(SignalIoError::Scenario(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if !saw_stages {
            return Err(SignalIoError::Scenario("missing key \"stages\"".into()));
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Renders back to the text form accepted by [`SyntheticScenario::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut runs: Vec<(Stage, usize)> = Vec::new();
        for &s in &self.stages {
            match runs.last_mut() {
                Some((last, n)) if *last == s => *n += 1,
                _ => runs.push((s, 1)),
            }
        }
        let stages: Vec<String> = runs.iter().map(|(s, n)| format!("{s}*{n}")).collect();
        let _ = writeln!(out, "stages = {}", stages.join(" "));
        let _ = writeln!(out, "subjects = {}", self.subjects);
        let _ = writeln!(out, "noise_uv = {}", self.noise_uv);
        let _ = writeln!(out, "amplitude_uv = {}", self.amplitude_uv);
        let _ = writeln!(out, "kcomplex = {}", self.kcomplex);
        let _ = writeln!(out, "sample_rate_hz = {}", self.sample_rate_hz);
        let _ = writeln!(out, "channel = {}", self.channel);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(SignalIoError::Scenario("empty stage sequence".into()));
        }
        if self.subjects == 0 {
            return Err(SignalIoError::Scenario("subjects must be positive".into()));
        }
        if self.sample_rate_hz < 65 {
            return Err(SignalIoError::Scenario(
                "sample rate must exceed 64 Hz to represent the beta band".into(),
            ));
        }
        if !(self.noise_uv >= 0.0 && self.amplitude_uv >= 0.0) {
            return Err(SignalIoError::Scenario("amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Seed used for subject `i` of a multi-subject scenario.
    pub fn subject_seed(&self, i: usize) -> u64 {
        self.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    pub fn subject_id(i: usize) -> String {
        format!("subj{i:02}")
    }

    /// All subjects of the scenario, each with its own derived seed.
    pub fn generate(&self) -> Result<Vec<(RawRecord, Vec<Stage>)>> {
        (0..self.subjects)
            .map(|i| {
                let (mut rec, stages) = synth_record(self, self.subject_seed(i))?;
                rec.subject_id = Self::subject_id(i);
                Ok((rec, stages))
            })
            .collect()
    }
}

fn parse_stage_list(value: &str) -> std::result::Result<Vec<Stage>, String> {
    let mut out = Vec::new();
    for tok in value.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let (name, count) = match tok.split_once('*') {
            Some((n, c)) => (n, c.parse::<usize>().map_err(|_| format!("bad repeat in {tok:?}"))?),
            None => (tok, 1),
        };
        let stage: Stage = name.parse()?;
        out.extend(std::iter::repeat(stage).take(count));
    }
    Ok(out)
}

/// (low, high) range the dominant sinusoid of a stage is drawn from. Kept
/// inside the nominal band edges so the band filters pass them cleanly.
fn dominant_range(stage: Stage) -> (f64, f64) {
    match stage {
        Stage::N3 => (0.8, 3.0),
        Stage::N1 => (4.8, 7.2),
        Stage::Rem => (8.8, 11.2),
        Stage::N2 => (12.6, 15.4),
        Stage::Wake => (18.0, 30.0),
    }
}

// A single tone keeps the dominant band's spike amplitudes regular, which is
// what survives per-window standardization. Several tones beat and look like noise.
const COMPONENTS: usize = 1;

/// Generates one subject's record. Pure function of `(scenario, seed)`.
pub fn synth_record(scenario: &SyntheticScenario, seed: u64) -> Result<(RawRecord, Vec<Stage>)> {
    scenario.validate()?;
    let rate = scenario.sample_rate_hz as f64;
    let n = epoch_len(scenario.sample_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, scenario.noise_uv.max(0.0))
        .map_err(|e| SignalIoError::Scenario(e.to_string()))?;

    let mut samples = Vec::with_capacity(n * scenario.stages.len());
    for &stage in &scenario.stages {
        let (lo, hi) = dominant_range(stage);
        let comps: Vec<(f64, f64, f64)> = (0..COMPONENTS)
            .map(|_| {
                let f = rng.gen_range(lo..hi);
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = scenario.amplitude_uv * rng.gen_range(0.8..1.2);
                (f, phase, amp)
            })
            .collect();
        let start = samples.len();
        for i in 0..n {
            let t = i as f64 / rate;
            let tone: f64 = comps.iter().map(|&(f, p, a)| a * (2.0 * PI * f * t + p).sin()).sum();
            samples.push(tone + noise.sample(&mut rng));
        }
        if stage == Stage::N2 && scenario.kcomplex {
            let bursts = rng.gen_range(1..=2);
            for _ in 0..bursts {
                let dur = rng.gen_range(0.5..1.5);
                let len = (dur * rate) as usize;
                let at = rng.gen_range(0..n - len);
                let amp = 3.0 * scenario.amplitude_uv;
                add_kcomplex(&mut samples[start + at..start + at + len], amp);
            }
        }
    }

    let record = RawRecord::new(
        samples,
        scenario.sample_rate_hz,
        scenario.channel.clone(),
        format!("synth-{seed}"),
    )?;
    Ok((record, scenario.stages.clone()))
}

/// Sharp negative deflection followed by a slower positive one.
fn add_kcomplex(window: &mut [f64], amp: f64) {
    let len = window.len() as f64;
    for (i, v) in window.iter_mut().enumerate() {
        let u = i as f64 / len;
        let shape = if u < 0.4 {
            -(PI * u / 0.4).sin()
        } else {
            0.6 * (PI * (u - 0.4) / 0.6).sin()
        };
        *v += amp * shape;
    }
}
