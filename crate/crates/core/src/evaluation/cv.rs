use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{confusion, metrics, ConfusionMatrix, EvalError, FoldPlan, Result, StageMetrics};
use crate::filterbank::BandSet;
use crate::model::{predict, train, EpochStats, ModelConfig, ModelState, TrainConfig};
use crate::signal_io::Stage;
use crate::spike_encoder::{EncoderArm, EncoderConfig, FeatureEpoch};

/// Encodes every band set, in parallel, keeping input order.
pub fn encode_all(bands: &[BandSet], encoder: &EncoderConfig) -> Result<Vec<FeatureEpoch>> {
    Ok(bands.par_iter().map(|b| encoder.encode(b)).collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub epoch_index: usize,
    pub truth: Stage,
    pub pred: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: StageMetrics,
    pub trace: Vec<EpochStats>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled_metrics: StageMetrics,
    pub fold_accuracy_mean: f64,
    pub fold_accuracy_std: f64,
    pub fold_macro_f1_mean: f64,
    pub fold_macro_f1_std: f64,
    /// Trained model of each fold, in fold order.
    #[serde(skip)]
    pub models: Vec<ModelState>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("encoder arm: {}\n\n", self.encoder.arm.name());
        for f in &self.folds {
            let _ = writeln!(
                out,
                "fold {} (train {} epochs, test {} epochs, test subjects {})",
                f.fold,
                f.n_train,
                f.n_test,
                f.test_subjects.join(" ")
            );
            out.push_str(&f.metrics.to_table());
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "per-fold accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}\n",
            self.fold_accuracy_mean, self.fold_accuracy_std, self.fold_macro_f1_mean, self.fold_macro_f1_std
        );
        out.push_str("pooled\n");
        out.push_str(&self.pooled_metrics.to_table());
        out.push('\n');
        out.push_str(&self.pooled_confusion.to_text());
        for w in &self.pooled_metrics.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    /// Predictions of one subject ordered by epoch index.
    pub fn subject_predictions(&self, subject: &str) -> Vec<&Prediction> {
        let mut v: Vec<&Prediction> = self
            .folds
            .iter()
            .flat_map(|f| &f.predictions)
            .filter(|p| p.subject_id == subject)
            .collect();
        v.sort_by_key(|p| p.epoch_index);
        v
    }
}

/// Record-wise cross-validation over pre-encoded features.
///
/// Unscored epochs are dropped. Fold `f` trains a fresh model seeded with
/// `train_cfg.seed + f`; folds run in parallel and are assembled in fold order.
pub fn cross_validate(
    features: &[FeatureEpoch],
    encoder: &EncoderConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: &FoldPlan,
) -> Result<CvReport> {
    let scored: Vec<&FeatureEpoch> = features.iter().filter(|f| f.stage.is_some()).collect();
    let mut fold_of = Vec::with_capacity(scored.len());
    for f in &scored {
        fold_of.push(plan.fold_of(&f.subject_id).ok_or_else(|| EvalError::Unassigned(f.subject_id.clone()))?);
    }

    let results: Vec<(FoldReport, ModelState)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<(FoldReport, ModelState)> {
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for (f, &k) in scored.iter().zip(&fold_of) {
                if k == fold {
                    te.push((*f).clone());
                } else {
                    tr.push((*f).clone());
                }
            }
            if te.is_empty() || tr.is_empty() {
                return Err(EvalError::EmptyFold(fold));
            }
            let model = ModelState::new(*model_cfg, train_cfg.seed.wrapping_add(fold as u64))?;
            let outcome = train(model, &tr, train_cfg)?;
            let pred = predict(&outcome.model, &te)?;
            let truth: Vec<Stage> = te.iter().map(|f| f.stage.expect("scored")).collect();
            let cm = confusion(&truth, &pred)?;
            let test_subjects = plan.subjects_in(fold);
            let train_subjects = plan
                .assignment
                .iter()
                .filter(|(_, &v)| v != fold)
                .map(|(s, _)| s.clone())
                .collect();
            let predictions = te
                .iter()
                .zip(&pred)
                .map(|(f, &p)| Prediction {
                    subject_id: f.subject_id.clone(),
                    epoch_index: f.epoch_index,
                    truth: f.stage.expect("scored"),
                    pred: p,
                })
                .collect();
            Ok((
                FoldReport {
                    fold,
                    train_subjects,
                    test_subjects,
                    n_train: tr.len(),
                    n_test: te.len(),
                    metrics: metrics(&cm)?,
                    confusion: cm,
                    trace: outcome.trace,
                    predictions,
                },
                outcome.model,
            ))
        })
        .collect::<Result<_>>()?;

    let (folds, models): (Vec<FoldReport>, Vec<ModelState>) = results.into_iter().unzip();
    let mut pooled = ConfusionMatrix::default();
    for f in &folds {
        pooled.add(&f.confusion);
    }
    let (am, asd) = mean_std(folds.iter().map(|f| f.metrics.accuracy));
    let (fm, fsd) = mean_std(folds.iter().map(|f| f.metrics.macro_f1));
    Ok(CvReport {
        encoder: *encoder,
        model: *model_cfg,
        train: *train_cfg,
        plan: plan.clone(),
        pooled_metrics: metrics(&pooled)?,
        pooled_confusion: pooled,
        folds,
        fold_accuracy_mean: am,
        fold_accuracy_std: asd,
        fold_macro_f1_mean: fm,
        fold_macro_f1_std: fsd,
        models,
    })
}

/// Encodes `bands` with `encoder`, then cross-validates.
pub fn run_cv(
    bands: &[BandSet],
    encoder: &EncoderConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    plan: &FoldPlan,
) -> Result<CvReport> {
    let features = encode_all(bands, encoder)?;
    cross_validate(&features, encoder, model_cfg, train_cfg, plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub stage: Stage,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Half-Gaussian arm versus fixed-threshold arm; deltas are half-Gaussian minus threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub half_gaussian: CvReport,
    pub threshold: CvReport,
    pub deltas: Vec<StageDelta>,
    pub accuracy_delta: f64,
    pub macro_f1_delta: f64,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let (a, b) = (&self.half_gaussian, &self.threshold);
        let mut out = String::new();
        let _ = writeln!(out, "half-Gaussian arm (accuracy {:.4})", a.pooled_metrics.accuracy);
        out.push_str(&a.pooled_confusion.to_text());
        let _ = writeln!(out, "\nthreshold arm (accuracy {:.4})", b.pooled_metrics.accuracy);
        out.push_str(&b.pooled_confusion.to_text());
        let _ = writeln!(out, "\n{:<6}{:>9}{:>9}{:>9}", "stage", "dPre", "dRe", "dF1");
        for d in &self.deltas {
            let _ = writeln!(out, "{:<6}{:>+9.3}{:>+9.3}{:>+9.3}", d.stage.as_str(), d.precision, d.recall, d.f1);
        }
        let _ = writeln!(
            out,
            "accuracy delta {:+.4}, macro-F1 delta {:+.4}",
            self.accuracy_delta, self.macro_f1_delta
        );
        out
    }
}

/// Runs [`run_cv`] for both encoder arms with the same plan, model and seeds.
///
/// `encoder` supplies the shared window size and accumulation width; its arm
/// is overridden. `cutoff` is the threshold arm's gate.
pub fn compare_ablation(
    bands: &[BandSet],
    plan: &FoldPlan,
    encoder: &EncoderConfig,
    cutoff: f64,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<AblationReport> {
    let hg = EncoderConfig {
        arm: EncoderArm::HalfGaussian,
        ..*encoder
    };
    let th = EncoderConfig {
        arm: EncoderArm::Threshold { cutoff },
        ..*encoder
    };
    let half_gaussian = run_cv(bands, &hg, model_cfg, train_cfg, plan)?;
    let threshold = run_cv(bands, &th, model_cfg, train_cfg, plan)?;
    let (p, q) = (&half_gaussian.pooled_metrics, &threshold.pooled_metrics);
    let deltas = Stage::ALL
        .iter()
        .map(|&s| {
            let i = s.index();
            StageDelta {
                stage: s,
                precision: p.precision[i] - q.precision[i],
                recall: p.recall[i] - q.recall[i],
                f1: p.f1[i] - q.f1[i],
            }
        })
        .collect();
    Ok(AblationReport {
        accuracy_delta: p.accuracy - q.accuracy,
        macro_f1_delta: p.macro_f1 - q.macro_f1,
        deltas,
        half_gaussian,
        threshold,
    })
}
