//! Flat dotted-key run configuration.
//!
//! Resolution order per key: command-line flag, then config file, then the
//! built-in default. Unknown keys are rejected so typos do not pass silently.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use spikestage::filterbank::FilterBankConfig;
use spikestage::model::{ModelConfig, PositionalEncoding, TrainConfig};
use spikestage::signal_io::{epoch_len, SyntheticScenario};
use spikestage::spike_encoder::{EncoderArm, EncoderConfig, HalfGaussianParams};

use crate::CliError;

/// Every recognized key with its default.
pub fn defaults() -> BTreeMap<String, Value> {
    let pairs = [
        ("out", json!("runs")),
        ("seed", json!(0)),
        ("channel", json!("C4-A1")),
        ("sample_rate_hz", json!(125)),
        ("data.manifest", Value::Null),
        ("data.resample", json!(false)),
        ("features.dir", Value::Null),
        ("synth.stages", Value::Null),
        ("synth.subjects", json!(1)),
        ("synth.noise_uv", json!(5.0)),
        ("synth.amplitude_uv", json!(20.0)),
        ("synth.kcomplex", json!(true)),
        ("filter.front_low_hz", json!(0.5)),
        ("filter.front_high_hz", json!(35.0)),
        ("filter.front_order", json!(8)),
        ("filter.band_order", json!(8)),
        ("encoder.mu", json!(0.0)),
        ("encoder.sigma", json!(0.5)),
        ("encoder.window_size", json!(125)),
        ("encoder.normalize", json!(true)),
        ("encoder.accum_width", json!(25)),
        ("encoder.ablation_threshold", Value::Null),
        ("encoder.ablation_cutoff", json!(0.5)),
        ("model.depth", json!(8)),
        ("model.heads", json!(4)),
        ("model.dim", json!(128)),
        ("model.attention_scale", json!(8.0)),
        ("model.mlp_dim", json!(128)),
        ("model.dropout", json!(0.5)),
        ("model.positional", json!("learned")),
        ("train.epochs", json!(100)),
        ("train.batch_size", json!(32)),
        ("train.learning_rate", json!(1e-4)),
        ("train.max_steps", Value::Null),
        ("folds.k", json!(7)),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn flatten(prefix: &str, obj: &Map<String, Value>, out: &mut BTreeMap<String, Value>) {
    for (k, v) in obj {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) => flatten(&key, inner, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Reads a JSON config file. Nested objects are accepted and flattened.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(obj) = value else {
        return Err(CliError::Validation(format!("config {} must be a JSON object", path.display())));
    };
    let mut out = BTreeMap::new();
    flatten("", &obj, &mut out);
    Ok(out)
}

/// Merges layers onto the defaults, later layers winning.
pub fn merge(layers: &[&BTreeMap<String, Value>]) -> Result<BTreeMap<String, Value>, CliError> {
    let mut resolved = defaults();
    for layer in layers {
        for (k, v) in layer.iter() {
            match resolved.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(CliError::Validation(format!("unknown config key {k:?}"))),
            }
        }
    }
    Ok(resolved)
}

/// Parses `--set key=value`; the value is JSON when it parses, otherwise a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Typed view of a resolved key map.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub resolved: BTreeMap<String, Value>,
    pub out: PathBuf,
    pub seed: u64,
    pub channel: String,
    pub sample_rate_hz: u32,
    pub manifest: Option<PathBuf>,
    pub resample: bool,
    pub features_dir: Option<PathBuf>,
    pub scenario: Option<SyntheticScenario>,
    pub filter: FilterBankConfig,
    pub encoder: EncoderConfig,
    pub ablation_cutoff: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
}

struct Keys<'a>(&'a BTreeMap<String, Value>);

impl Keys<'_> {
    fn get(&self, k: &str) -> &Value {
        self.0.get(k).expect("key has a default")
    }

    fn bad(k: &str, want: &str, v: &Value) -> CliError {
        CliError::Validation(format!("config key {k}: expected {want}, got {v}"))
    }

    fn f64(&self, k: &str) -> Result<f64, CliError> {
        let v = self.get(k);
        v.as_f64().ok_or_else(|| Self::bad(k, "a number", v))
    }

    fn opt_f64(&self, k: &str) -> Result<Option<f64>, CliError> {
        match self.get(k) {
            Value::Null => Ok(None),
            _ => self.f64(k).map(Some),
        }
    }

    fn usize(&self, k: &str) -> Result<usize, CliError> {
        let v = self.get(k);
        v.as_u64().map(|n| n as usize).ok_or_else(|| Self::bad(k, "a non-negative integer", v))
    }

    fn opt_usize(&self, k: &str) -> Result<Option<usize>, CliError> {
        match self.get(k) {
            Value::Null => Ok(None),
            _ => self.usize(k).map(Some),
        }
    }

    fn bool(&self, k: &str) -> Result<bool, CliError> {
        let v = self.get(k);
        v.as_bool().ok_or_else(|| Self::bad(k, "true or false", v))
    }

    fn string(&self, k: &str) -> Result<String, CliError> {
        let v = self.get(k);
        v.as_str().map(str::to_string).ok_or_else(|| Self::bad(k, "a string", v))
    }

    fn opt_string(&self, k: &str) -> Result<Option<String>, CliError> {
        match self.get(k) {
            Value::Null => Ok(None),
            _ => self.string(k).map(Some),
        }
    }
}

impl RunConfig {
    pub fn from_resolved(resolved: BTreeMap<String, Value>) -> Result<Self, CliError> {
        let k = Keys(&resolved);
        let invalid = |e: String| CliError::Validation(e);
        let seed = k.get("seed").as_u64().ok_or_else(|| Keys::bad("seed", "a non-negative integer", k.get("seed")))?;
        let channel = k.string("channel")?;
        let sample_rate_hz = u32::try_from(k.usize("sample_rate_hz")?)
            .map_err(|_| invalid("sample_rate_hz out of range".into()))?;

        let scenario = match k.opt_string("synth.stages")? {
            None => None,
            Some(stages) => {
                let mut sc = SyntheticScenario::parse(&format!("stages = {stages}"))
                    .map_err(|e| invalid(format!("synth.stages: {e}")))?;
                sc.subjects = k.usize("synth.subjects")?;
                sc.noise_uv = k.f64("synth.noise_uv")?;
                sc.amplitude_uv = k.f64("synth.amplitude_uv")?;
                sc.kcomplex = k.bool("synth.kcomplex")?;
                sc.sample_rate_hz = sample_rate_hz;
                sc.channel = channel.clone();
                sc.seed = seed;
                sc.validate().map_err(|e| invalid(format!("synthetic spec: {e}")))?;
                Some(sc)
            }
        };

        let filter = FilterBankConfig {
            front_low_hz: k.f64("filter.front_low_hz")?,
            front_high_hz: k.f64("filter.front_high_hz")?,
            front_order: k.usize("filter.front_order")?,
            band_order: k.usize("filter.band_order")?,
            sample_rate_hz: sample_rate_hz as f64,
        };

        let params = HalfGaussianParams {
            mu: k.f64("encoder.mu")?,
            sigma: k.f64("encoder.sigma")?,
            window_size: k.usize("encoder.window_size")?,
            normalize_to_unit_peak: k.bool("encoder.normalize")?,
        };
        params.validate().map_err(|e| invalid(e.to_string()))?;
        let arm = match k.opt_f64("encoder.ablation_threshold")? {
            Some(cutoff) => EncoderArm::Threshold { cutoff },
            None => EncoderArm::HalfGaussian,
        };
        let ablation_cutoff = match arm {
            EncoderArm::Threshold { cutoff } => cutoff,
            EncoderArm::HalfGaussian => k.f64("encoder.ablation_cutoff")?,
        };
        if !(ablation_cutoff > 0.0 && ablation_cutoff <= 1.0) {
            return Err(invalid(format!("ablation cutoff {ablation_cutoff} must lie in (0, 1]")));
        }
        let encoder = EncoderConfig {
            params,
            accumulation_width: k.usize("encoder.accum_width")?,
            arm,
        };
        let n = epoch_len(sample_rate_hz);
        if encoder.accumulation_width == 0 || n % encoder.accumulation_width != 0 {
            return Err(invalid(format!(
                "encoder.accum_width {} must divide the epoch length {n}",
                encoder.accumulation_width
            )));
        }

        let positional = match k.string("model.positional")?.as_str() {
            "learned" => PositionalEncoding::Learned,
            "sinusoidal" => PositionalEncoding::Sinusoidal,
            "none" => PositionalEncoding::None,
            other => return Err(invalid(format!("model.positional {other:?} not one of learned, sinusoidal, none"))),
        };
        let model = ModelConfig {
            depth: k.usize("model.depth")?,
            heads: k.usize("model.heads")?,
            model_dim: k.usize("model.dim")?,
            attention_scale: k.f64("model.attention_scale")?,
            mlp_dim: k.usize("model.mlp_dim")?,
            dropout: k.f64("model.dropout")?,
            seq_len: n / encoder.accumulation_width,
            positional,
            ..ModelConfig::default()
        };
        model.validate().map_err(|e| invalid(e.to_string()))?;
        let train = TrainConfig {
            epochs: k.usize("train.epochs")?,
            batch_size: k.usize("train.batch_size")?,
            learning_rate: k.f64("train.learning_rate")?,
            max_steps: k.opt_usize("train.max_steps")?,
            seed,
            ..TrainConfig::default()
        };
        train.validate().map_err(|e| invalid(e.to_string()))?;

        let folds = k.usize("folds.k")?;
        if folds < 2 {
            return Err(invalid(format!("folds.k must be at least 2, got {folds}")));
        }
        let manifest = k.opt_string("data.manifest")?.map(PathBuf::from);
        if let Some(m) = &manifest {
            if !m.is_file() {
                return Err(invalid(format!("data.manifest {} does not exist", m.display())));
            }
        }
        let features_dir = k.opt_string("features.dir")?.map(PathBuf::from);
        if let Some(d) = &features_dir {
            if !d.is_dir() {
                return Err(invalid(format!("features.dir {} is not a directory", d.display())));
            }
        }

        Ok(Self {
            out: PathBuf::from(k.string("out")?),
            resample: k.bool("data.resample")?,
            seed,
            channel,
            sample_rate_hz,
            manifest,
            features_dir,
            scenario,
            filter,
            encoder,
            ablation_cutoff,
            model,
            train,
            folds,
            resolved,
        })
    }

    /// Pretty JSON of the resolved flat key map.
    pub fn resolved_json(&self) -> String {
        let obj: Map<String, Value> = self.resolved.clone().into_iter().collect();
        serde_json::to_string_pretty(&Value::Object(obj)).expect("plain JSON values") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_defaults_describe_full_model() {
        let c = RunConfig::from_resolved(defaults()).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.encoder, EncoderConfig::default());
        assert_eq!(c.filter, FilterBankConfig::default());
        assert_eq!(c.folds, 7);
        assert_eq!(c.model.seq_len, 150);
    }

    #[test]
    fn later_layers_win() {
        let file: BTreeMap<String, Value> = [("encoder.sigma".to_string(), json!(0.7)), ("seed".to_string(), json!(3))].into();
        let flags: BTreeMap<String, Value> = [("seed".to_string(), json!(9))].into();
        let r = merge(&[&file, &flags]).unwrap();
        assert_eq!(r["encoder.sigma"], json!(0.7));
        assert_eq!(r["seed"], json!(9));
        assert_eq!(r["model.depth"], json!(8));
    }

    #[test]
    fn unknown_key_rejected() {
        let bad: BTreeMap<String, Value> = [("model.dpeth".to_string(), json!(2))].into();
        assert!(matches!(merge(&[&bad]), Err(CliError::Validation(m)) if m.contains("model.dpeth")));
    }

    #[test]
    fn threshold_switches_arm() {
        let mut r = defaults();
        r.insert("encoder.ablation_threshold".into(), json!(0.4));
        let c = RunConfig::from_resolved(r).unwrap();
        assert_eq!(c.encoder.arm, EncoderArm::Threshold { cutoff: 0.4 });
    }

    #[test]
    fn assignments() {
        assert_eq!(parse_assignment("model.depth=2").unwrap(), ("model.depth".into(), json!(2)));
        assert_eq!(parse_assignment("channel=C3-A2").unwrap(), ("channel".into(), json!("C3-A2")));
        assert!(parse_assignment("nothing").is_err());
    }

    #[test]
    fn accum_width_must_divide() {
        let mut r = defaults();
        r.insert("encoder.accum_width".into(), json!(7));
        assert!(RunConfig::from_resolved(r).is_err());
    }
}
