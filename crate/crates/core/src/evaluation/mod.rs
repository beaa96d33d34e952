//! Record-wise cross-validation, stage metrics, encoder ablation and hypnograms.

mod cv;
mod folds;
mod hypnogram;
mod metrics;

use thiserror::Error;

pub use self::cv::{
    compare_ablation, cross_validate, encode_all, run_cv, AblationReport, CvReport, FoldReport, Prediction, StageDelta,
};
pub use self::folds::{make_folds, FoldPlan, DEFAULT_FOLDS};
pub use self::hypnogram::{export_hypnogram, Hypnogram};
pub use self::metrics::{confusion, metrics, ConfusionMatrix, StageMetrics};
use crate::model::ModelError;
use crate::spike_encoder::EncoderError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{subjects} subjects cannot fill {k} folds (need k >= 2 and at least k subjects)")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("sequence lengths differ: {truth} true vs {pred} predicted")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("fold {0} has no evaluable epochs in its train or test split")]
    EmptyFold(usize),
    #[error("subject {0} is not assigned to any fold")]
    Unassigned(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;
