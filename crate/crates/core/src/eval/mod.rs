//! Metrics, fold aggregation, the configuration ablation and report output.

mod ablation;
mod gating;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};

pub use ablation::{ablation_run, rank_rows, AblationOutcome, AblationRow, AblationTable};
pub use gating::{gating_stats, summarize_gates, summarize_predictions, GateSummary, GATE_HISTOGRAM_BINS};
pub use metrics::{
    aggregate_folds, confusion, evaluate, macro_f1, metrics_from_confusion, AggregateReport, ConfusionMatrix,
    MetricsReport,
};
pub use report::{
    emit_predictions, emit_report, per_class_table, write_figure_svg, write_fold_csv, write_markdown,
    write_per_class_csv, write_ranked_csv, PerClassRow, ReportFormat, RANKED_HEADER,
};

use crate::fusion::{AttentionMap, GateWeights};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },
    #[error("{0} requires text-removed image embeddings")]
    MissingImageVariant(crate::fusion::ModelConfigId),
    #[error("{0} has no gating network")]
    NoGate(crate::fusion::ModelConfigId),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Inference result for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
    pub gate: Option<GateWeights>,
    pub attention: Option<Vec<AttentionMap>>,
}
