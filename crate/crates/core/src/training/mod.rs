//! Optimization protocol and the cross-validation loop.

mod data;
mod loss;
mod optim;
mod schedule;
mod trainer;

use serde::{Deserialize, Serialize};

pub use data::EmbeddedDataset;
pub use loss::{compute_class_weights, smoothed_weighted_ce, smoothed_weighted_ce_batch, ClassWeights};
pub use optim::AdamW;
pub use schedule::{early_stop_step, scheduler_step, SchedulerState, StopState};
pub use trainer::{run_cv, train_fold, train_model, EpochRecord, FoldResult, TrainRecord, TrainedModel};

use crate::fusion::FusionError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("class {class} has no training samples")]
    ZeroClassCount { class: usize },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("target class {target} out of range for {num_classes} classes")]
    BadTarget { target: usize, num_classes: usize },
    #[error("empty {0} set")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Ensemble(#[from] crate::ensemble::EnsembleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub suppression_exponent: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 1e-2,
            dropout_rate: 0.5,
            label_smoothing: 0.1,
            suppression_exponent: 0.3,
            lr_factor: 0.5,
            lr_patience: 5,
            stop_patience: 10,
            min_delta: 1e-4,
            batch_size: 16,
            max_epochs: 100,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if !(self.suppression_exponent >= 0.0 && self.suppression_exponent.is_finite()) {
            return bad("suppression_exponent must be non-negative");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad("lr_factor must lie in (0, 1]");
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return bad("patiences must be at least 1");
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return bad("min_delta must be non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 2e-5);
        assert_eq!(c.weight_decay, 1e-2);
        assert_eq!((c.lr_patience, c.stop_patience), (5, 10));
    }

    #[test]
    fn invalid_values_rejected() {
        for f in [
            |c: &mut TrainConfig| c.learning_rate = 0.0,
            |c: &mut TrainConfig| c.label_smoothing = 1.0,
            |c: &mut TrainConfig| c.suppression_exponent = -0.1,
            |c: &mut TrainConfig| c.stop_patience = 0,
        ] {
            let mut c = TrainConfig::default();
            f(&mut c);
            assert!(c.validate().is_err());
        }
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::EmbeddedDataset;
    use crate::corpus::FoldAssignment;

    /// Linearly separable text embeddings: class `c` points along axis `c`.
    /// Images are noise.
    pub(crate) fn separable(n: usize, seed: u64) -> EmbeddedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut text = Array2::zeros((n, 1024));
        let mut image = Array2::zeros((n, 512));
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..1024 {
                text[[i, j]] = rng.random_range(-0.02..0.02);
            }
            text[[i, l]] += 0.5;
            for j in 0..512 {
                image[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        EmbeddedDataset {
            ids: (0..n).map(|i| format!("s{i}")).collect(),
            labels,
            num_classes: 2,
            text: Some(text),
            image: Some(image.clone()),
            image_text_removed: Some(image),
        }
    }

    pub(crate) fn tiny() -> EmbeddedDataset {
        separable(12, 0)
    }

    /// Round-robin folds by position.
    pub(crate) fn folds_for(data: &EmbeddedDataset, k: usize) -> FoldAssignment {
        FoldAssignment {
            k,
            seed: 0,
            assignment: data.ids.iter().enumerate().map(|(i, id)| (id.clone(), (i / 2) % k)).collect(),
        }
    }
}
