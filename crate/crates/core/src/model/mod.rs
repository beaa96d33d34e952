//! Transformer encoder classifier over accumulated spike features.
//!
//! ```text
//! features (T x 10) ─▶ linear 10→D ─▶ + positions
//!     ─▶ depth × [ x + Drop(MHA(LN(x))) ;  x + FFN(LN(x)) ]
//!     ─▶ LN ─▶ mean over T ─▶ linear D→5 ─▶ logits
//! ```
//!
//! Attention logits are divided by the configured constant `attention_scale`
//! (8 by default) rather than by `sqrt(D / heads)`.
//!
//! Parameter count, with `I` input features, `T` tokens, `D` model width,
//! `M` MLP width, `C` classes, `L` blocks and `P = T·D` only for learned
//! positions:
//!
//! ```text
//! I·D + D + P + L·(4·D² + 2·D·M + M + 9·D) + 2·D + D·C + C
//! ```

mod gradcheck;
mod layers;
mod params;
mod serialize;
mod tensor;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::Stage;
use crate::spike_encoder::FeatureEpoch;

pub use self::gradcheck::{grad_check, sample_gradients, GradCheckReport};
pub use self::layers::gelu;
pub use self::params::{BlockParams, Params};
pub use self::serialize::{load_model, load_model_expecting, read_model, save_model, write_model, MODEL_MAGIC};
pub use self::tensor::Tensor;
pub use self::train::{train, EpochStats, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values{}: {detail}", .block.map(|b| format!(" in block {b}")).unwrap_or_default())]
    NonFinite { block: Option<usize>, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unlabeled epoch {epoch_index} of subject {subject_id}")]
    Unlabeled { subject_id: String, epoch_index: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    Learned,
    Sinusoidal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub attention_scale: f64,
    pub mlp_dim: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub seq_len: usize,
    pub input_dim: usize,
    pub positional: PositionalEncoding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            heads: 4,
            model_dim: 128,
            attention_scale: 8.0,
            mlp_dim: 128,
            dropout: 0.5,
            num_classes: Stage::COUNT,
            seq_len: 150,
            input_dim: crate::spike_encoder::NUM_COLUMNS,
            positional: PositionalEncoding::Learned,
        }
    }
}

impl ModelConfig {
    /// Gradient-check configuration: T=4, D=8, two heads, one block, no dropout.
    pub fn tiny() -> Self {
        Self {
            depth: 1,
            heads: 2,
            model_dim: 8,
            attention_scale: 2.0,
            mlp_dim: 8,
            dropout: 0.0,
            seq_len: 4,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.depth, self.heads, self.model_dim, self.mlp_dim, self.num_classes, self.seq_len, self.input_dim];
        if dims.contains(&0) {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(self.attention_scale > 0.0 && self.attention_scale.is_finite()) {
            return Err(ModelError::Config("attention_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form parameter count (see module docs).
    pub fn parameter_count(&self) -> usize {
        let (i, t, d, m, c, l) = (self.input_dim, self.seq_len, self.model_dim, self.mlp_dim, self.num_classes, self.depth);
        let pos = if self.positional == PositionalEncoding::Learned { t * d } else { 0 };
        i * d + d + pos + l * (4 * d * d + 2 * d * m + m + 9 * d) + 2 * d + d * c + c
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
}

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Params::init(&config, seed),
            config,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks derived from the seed and the item's batch position.
    Train { seed: u64 },
    Eval,
}

pub(crate) fn item_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn features_to_f64(f: &FeatureEpoch) -> Vec<f64> {
    f.data().iter().map(|&v| v as f64).collect()
}

fn check_shape(t: &Tensor, rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.shape != [rows, cols] {
        return Err(ModelError::ShapeMismatch(format!("{what}: {:?}, expected [{rows}, {cols}]", t.shape)));
    }
    Ok(())
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(ModelError::NonFinite {
            block: None,
            detail: what.into(),
        });
    }
    Ok(())
}

/// Scaled dot-product attention `softmax(Q K^T / scale) V` on `T x d` inputs.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    attention_with_weights(q, k, v, scale).map(|(out, _)| out)
}

/// As [`attention`], also returning the `T x S` probability matrix.
pub fn attention_with_weights(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<(Tensor, Tensor)> {
    if q.shape.len() != 2 || k.shape.len() != 2 || v.shape.len() != 2 {
        return Err(ModelError::ShapeMismatch("attention inputs must be matrices".into()));
    }
    let (t, dk, s, dv) = (q.rows(), q.cols(), k.rows(), v.cols());
    check_shape(k, s, dk, "keys")?;
    check_shape(v, s, dv, "values")?;
    if !(scale > 0.0) {
        return Err(ModelError::Config("attention scale must be positive".into()));
    }
    for (x, n) in [(q, "queries"), (k, "keys"), (v, "values")] {
        check_finite(x, n)?;
    }
    let (p, out) = layers::scaled_dot_attention(&q.data, &k.data, &v.data, t, s, dk, dv, scale);
    Ok((
        Tensor { shape: vec![t, dv], data: out },
        Tensor { shape: vec![t, s], data: p },
    ))
}

/// Multi-head self-attention sub-layer of one block (no norm, no residual).
pub fn multi_head(x: &Tensor, block: &BlockParams, cfg: &ModelConfig) -> Result<Tensor> {
    cfg.validate()?;
    check_shape(x, x.rows(), cfg.model_dim, "input")?;
    let (out, _) = layers::multi_head_forward(&x.data, block, cfg);
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Position-wise feed-forward sub-layer of one block, eval mode.
pub fn feed_forward(x: &Tensor, block: &BlockParams, cfg: &ModelConfig) -> Result<Tensor> {
    check_shape(x, x.rows(), cfg.model_dim, "input")?;
    let (out, _) = layers::feed_forward_forward(&x.data, block, cfg, None);
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

fn check_features(model: &ModelState, f: &FeatureEpoch) -> Result<()> {
    let (rows, cols) = f.shape();
    if rows != model.config.seq_len || cols != model.config.input_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "features {rows} x {cols}, model expects {} x {}",
            model.config.seq_len, model.config.input_dim
        )));
    }
    Ok(())
}

/// Logits `[batch, num_classes]`. Items are evaluated in parallel; each is
/// independent so the result does not depend on scheduling.
pub fn forward(model: &ModelState, batch: &[FeatureEpoch], mode: Mode) -> Result<Tensor> {
    for f in batch {
        check_features(model, f)?;
    }
    let rows: Vec<Vec<f64>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let x = features_to_f64(f);
            let mut rng = match mode {
                Mode::Train { seed } => Some(item_rng(seed, i as u64)),
                Mode::Eval => None,
            };
            layers::forward_sample(&model.params, &model.config, &x, rng.as_mut()).map(|(l, _)| l)
        })
        .collect::<Result<_>>()?;
    Ok(Tensor {
        shape: vec![batch.len(), model.config.num_classes],
        data: rows.concat(),
    })
}

/// Final-norm token representations (`T x D`) that feed the mean pool, eval mode.
pub fn encode_tokens(model: &ModelState, features: &FeatureEpoch) -> Result<Tensor> {
    check_features(model, features)?;
    let x = features_to_f64(features);
    let (_, cache) = layers::forward_sample(&model.params, &model.config, &x, None)?;
    Ok(Tensor {
        shape: vec![model.config.seq_len, model.config.model_dim],
        data: cache.tokens,
    })
}

/// Arg-max stage for each item, eval mode.
pub fn predict(model: &ModelState, batch: &[FeatureEpoch]) -> Result<Vec<Stage>> {
    let logits = forward(model, batch, Mode::Eval)?;
    Ok((0..batch.len())
        .map(|i| Stage::from_index(argmax(logits.row(i))).expect("num_classes = 5"))
        .collect())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Row-wise softmax of a logits tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    layers::softmax_rows(&mut out.data, logits.cols());
    out
}
