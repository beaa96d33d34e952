use super::layers::{backward_sample, cross_entropy, forward_sample};
use super::params::Params;
use super::{features_to_f64, ModelError, ModelState, Result};
use crate::signal_io::Stage;
use crate::spike_encoder::FeatureEpoch;

/// Step of the five-point central stencil. Its O(h^4) truncation error is
/// negligible at this size, while rounding noise (~eps·|loss|/h) stays well
/// below the relative-error floor.
const STEP: f64 = 1e-3;

/// Denominator floor of the relative error. Gradients smaller than this are
/// compared in absolute terms, where central differences at `STEP` cannot
/// resolve relative error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Eval-mode loss and analytic gradients of `loss_scale * cross_entropy`.
pub fn sample_gradients(model: &ModelState, features: &FeatureEpoch, label: Stage, loss_scale: f64) -> Result<(f64, Params)> {
    let x = features_to_f64(features);
    let (logits, cache) = forward_sample(&model.params, &model.config, &x, None)?;
    let (loss, mut dlogits) = cross_entropy(&logits, label.index());
    dlogits.iter_mut().for_each(|v| *v *= loss_scale);
    Ok((loss * loss_scale, backward_sample(&model.params, &model.config, &cache, &dlogits)))
}

fn loss_at(model: &ModelState, x: &[f64], label: usize) -> Result<f64> {
    let (logits, _) = forward_sample(&model.params, &model.config, x, None)?;
    Ok(cross_entropy(&logits, label).0)
}

/// Compares every analytic parameter gradient against five-point central differences.
pub fn grad_check(model: &ModelState, features: &FeatureEpoch, label: Stage) -> Result<GradCheckReport> {
    if model.config.dropout != 0.0 {
        return Err(ModelError::Config("gradient check needs dropout = 0".into()));
    }
    let (_, analytic) = sample_gradients(model, features, label, 1.0)?;
    let x = features_to_f64(features);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    let names: Vec<(String, usize)> = model.params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        let grad = analytic.tensors()[ti].1.data.clone();
        for i in 0..*len {
            let orig = probe.params.tensors()[ti].1.data[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.params.tensors_mut()[ti].1.data[i] = orig + delta;
                loss_at(&probe, &x, label.index())
            };
            let (p2, p1, m1, m2) = (at(2.0 * STEP)?, at(STEP)?, at(-STEP)?, at(-2.0 * STEP)?);
            probe.params.tensors_mut()[ti].1.data[i] = orig;
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * STEP);
            let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (name.clone(), i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
