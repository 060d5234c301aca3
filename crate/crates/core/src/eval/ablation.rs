use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_folds, AggregateReport, EvalError, MetricsReport};
use crate::corpus::FoldAssignment;
use crate::fusion::{ImageVariant, ModelConfigId};
use crate::training::{run_cv, EmbeddedDataset, FoldResult, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rank: usize,
    pub config: ModelConfigId,
    pub aggregate: AggregateReport,
    pub folds: Vec<MetricsReport>,
}

impl AblationRow {
    pub fn label(&self) -> String {
        format!("{}: {}", self.config, self.config.description())
    }

    pub fn f1_macro(&self) -> f64 {
        self.aggregate.mean.macro_f1
    }

    pub fn accuracy(&self) -> f64 {
        self.aggregate.mean.accuracy
    }

    pub fn precision(&self) -> f64 {
        self.aggregate.mean.macro_precision
    }

    pub fn recall(&self) -> f64 {
        self.aggregate.mean.macro_recall
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, config: ModelConfigId) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }
}

/// Sorts by mean macro-F1 descending, then accuracy descending, then
/// configuration id, and assigns ranks 1..n.
pub fn rank_rows(mut rows: Vec<AblationRow>) -> AblationTable {
    rows.sort_by(|a, b| {
        b.f1_macro()
            .partial_cmp(&a.f1_macro())
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.accuracy().partial_cmp(&a.accuracy()).unwrap_or(Ordering::Equal))
            .then_with(|| a.config.cmp(&b.config))
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    AblationTable { rows }
}

pub struct AblationOutcome {
    pub table: AblationTable,
    /// Per-configuration fold results, in request order.
    pub results: Vec<(ModelConfigId, Vec<FoldResult>)>,
}

/// Cross-validates every requested configuration (in parallel) and ranks
/// the fold-averaged results.
pub fn ablation_run(
    data: &EmbeddedDataset,
    folds: &FoldAssignment,
    configs: &[ModelConfigId],
    cfg: &TrainConfig,
) -> Result<AblationOutcome, EvalError> {
    for &c in configs {
        if c.uses_image() && c.image_variant() == ImageVariant::TextRemoved && data.image_text_removed.is_none() {
            return Err(EvalError::MissingImageVariant(c));
        }
    }
    let results: Vec<(ModelConfigId, Vec<FoldResult>)> = configs
        .par_iter()
        .map(|&c| {
            log::info!("cross-validating {c}");
            run_cv(c, data, folds, cfg).map(|r| (c, r))
        })
        .collect::<Result<_, _>>()?;
    let rows = results
        .iter()
        .map(|(c, folds)| {
            let reports: Vec<MetricsReport> = folds.iter().map(|f| f.report.clone()).collect();
            Ok(AblationRow {
                rank: 0,
                config: *c,
                aggregate: aggregate_folds(&reports)?,
                folds: reports,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(AblationOutcome {
        table: rank_rows(rows),
        results,
    })
}
