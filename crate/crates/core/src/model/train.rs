use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{backward_sample, cross_entropy, forward_sample};
use super::params::Params;
use super::{argmax, features_to_f64, item_rng, ModelError, ModelState, Result};
use crate::spike_encoder::FeatureEpoch;

/// Samples per gradient work unit. Fixed so the reduction order, and hence
/// every bit of the update, is independent of the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ModelError::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the train-mode predictions made while fitting.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub trace: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    /// CSV with header `epoch,mean_loss,train_accuracy`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,train_accuracy\n");
        for s in &self.trace {
            out.push_str(&format!("{},{},{}\n", s.epoch, s.mean_loss, s.train_accuracy));
        }
        out
    }
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    fn new(p: &Params) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct ChunkResult {
    loss: f64,
    correct: usize,
    grads: Params,
}

/// Minimizes mean softmax cross-entropy with Adam.
///
/// Shuffling, dropout masks and the reduction order are all fixed by
/// `cfg.seed`, so two calls with equal inputs return bit-identical results.
pub fn train(mut model: ModelState, data: &[FeatureEpoch], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.config.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut samples = Vec::with_capacity(data.len());
    for f in data {
        let label = f.stage.ok_or_else(|| ModelError::Unlabeled {
            subject_id: f.subject_id.clone(),
            epoch_index: f.epoch_index,
        })?;
        if f.shape() != (model.config.seq_len, model.config.input_dim) {
            return Err(ModelError::ShapeMismatch(format!(
                "features {:?}, model expects ({}, {})",
                f.shape(),
                model.config.seq_len,
                model.config.input_dim
            )));
        }
        samples.push((features_to_f64(f), label.index()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let dropout_seed = step_seed(cfg.seed, step);
            let params = &model.params;
            let mcfg = &model.config;
            let chunks: Vec<ChunkResult> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, idxs)| -> Result<ChunkResult> {
                    let mut acc = ChunkResult {
                        loss: 0.0,
                        correct: 0,
                        grads: params.zeros_like(),
                    };
                    for (j, &idx) in idxs.iter().enumerate() {
                        let (x, label) = &samples[idx];
                        let mut rng = (mcfg.dropout > 0.0)
                            .then(|| item_rng(dropout_seed, (ci * CHUNK + j) as u64));
                        let (logits, cache) = forward_sample(params, mcfg, x, rng.as_mut())?;
                        let (loss, dlogits) = cross_entropy(&logits, *label);
                        acc.loss += loss;
                        acc.correct += usize::from(argmax(&logits) == *label);
                        acc.grads.add_assign(&backward_sample(params, mcfg, &cache, &dlogits));
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    ModelError::NonFinite { .. } => ModelError::NonFiniteLoss { epoch, step },
                    other => other,
                })?;

            let mut iter = chunks.into_iter();
            let mut total = iter.next().expect("non-empty batch");
            for c in iter {
                total.loss += c.loss;
                total.correct += c.correct;
                total.grads.add_assign(&c.grads);
            }
            let n = batch.len() as f64;
            total.grads.scale(1.0 / n);
            let batch_loss = total.loss / n;
            if !batch_loss.is_finite() || !total.grads.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step });
            }
            adam.step(&mut model.params, &total.grads, cfg);
            step_losses.push(batch_loss);
            loss_sum += total.loss;
            correct += total.correct;
            seen += batch.len();
            step += 1;
        }
        if seen > 0 {
            trace.push(EpochStats {
                epoch,
                mean_loss: loss_sum / seen as f64,
                train_accuracy: correct as f64 / seen as f64,
            });
        }
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }

    Ok(TrainOutcome {
        model,
        trace,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::signal_io::Stage;

    fn toy(n: usize, cfg: &ModelConfig) -> Vec<FeatureEpoch> {
        (0..n)
            .map(|i| {
                let stage = Stage::ALL[i % 5];
                let data = (0..cfg.seq_len * 10)
                    .map(|j| if j % 10 == stage.index() * 2 { 1.0 } else { 0.1 })
                    .collect();
                FeatureEpoch::new(data, cfg.seq_len, Some(stage), i, "t").unwrap()
            })
            .collect()
    }

    #[test]
    fn rejects_empty_and_unlabeled() {
        let cfg = ModelConfig::tiny();
        let m = ModelState::new(cfg, 0).unwrap();
        assert!(matches!(train(m.clone(), &[], &TrainConfig::default()), Err(ModelError::EmptyDataset)));
        let unl = FeatureEpoch::zeros(cfg.seq_len);
        assert!(matches!(train(m, &[unl], &TrainConfig::default()), Err(ModelError::Unlabeled { .. })));
    }

    #[test]
    fn max_steps_respected() {
        let cfg = ModelConfig::tiny();
        let m = ModelState::new(cfg, 0).unwrap();
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 4,
            max_steps: Some(7),
            ..Default::default()
        };
        let out = train(m, &toy(10, &cfg), &tc).unwrap();
        assert_eq!(out.step_losses.len(), 7);
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = ModelConfig::tiny();
        let m = ModelState::new(cfg, 0).unwrap();
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 5,
            ..Default::default()
        };
        let out = train(m, &toy(10, &cfg), &tc).unwrap();
        let csv = out.trace_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,mean_loss,train_accuracy\n0,"));
    }
}
