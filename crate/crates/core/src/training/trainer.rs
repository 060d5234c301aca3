use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_class_weights, early_stop_step, scheduler_step, smoothed_weighted_ce_batch, AdamW, ClassWeights,
    EmbeddedDataset, SchedulerState, StopState, TrainConfig, TrainError,
};
use crate::corpus::FoldAssignment;
use crate::ensemble::{bagging_train, Ensemble};
use crate::eval::{evaluate, macro_f1, MetricsReport, Prediction};
use crate::fusion::{argmax, load_checkpoint, save_checkpoint, FusionModel, HybridHeadConfig, ModelConfigId};
use crate::nn::Parameters;

/// Rows per inference batch.
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_macro_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub class_weights: ClassWeights,
}

impl TrainRecord {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss", "val_macro_f1", "lr"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.val_macro_f1.to_string(),
                e.lr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Anything that can be evaluated after training.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum TrainedModel {
    Single(FusionModel),
    Ensemble(Ensemble),
}

impl TrainedModel {
    pub fn config(&self) -> ModelConfigId {
        match self {
            TrainedModel::Single(m) => m.config,
            TrainedModel::Ensemble(e) => e.spec.config,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TrainedModel::Single(m) => m.head_config.num_classes,
            TrainedModel::Ensemble(e) => e.members.first().map_or(0, |m| m.head_config.num_classes),
        }
    }

    pub fn predict(&self, data: &EmbeddedDataset) -> Result<Vec<Prediction>, TrainError> {
        match self {
            TrainedModel::Single(m) => predict_single(m, data),
            TrainedModel::Ensemble(e) => e.predict(data),
        }
    }

    /// Single models go to one checkpoint file, ensembles to a directory.
    pub fn save(&self, path: &Path, seed: u64) -> Result<(), TrainError> {
        match self {
            TrainedModel::Single(m) => save_checkpoint(m, seed, path)?,
            TrainedModel::Ensemble(e) => e.save(path)?,
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        if Ensemble::is_checkpoint_dir(path) {
            Ok(TrainedModel::Ensemble(Ensemble::load(path)?))
        } else {
            Ok(TrainedModel::Single(load_checkpoint(path)?.0))
        }
    }
}

pub(crate) fn predict_single(model: &FusionModel, data: &EmbeddedDataset) -> Result<Vec<Prediction>, TrainError> {
    let image = if model.config.uses_image() {
        Some(data.image_for(model.config.image_variant()).ok_or_else(|| {
            TrainError::Data(format!(
                "{} needs {} image embeddings",
                model.config,
                model.config.image_variant().as_str()
            ))
        })?)
    } else {
        None
    };
    let text = if model.config.uses_text() {
        Some(data.text.as_ref().ok_or_else(|| TrainError::Data(format!("{} needs text embeddings", model.config)))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(data.len());
    let mut start = 0;
    while start < data.len() {
        let end = (start + PREDICT_CHUNK).min(data.len());
        let slice = |a: &Array2<f64>| a.slice(ndarray::s![start..end, ..]).to_owned();
        let img = image.map(slice);
        let txt = text.map(slice);
        for o in model.predict_batch(img.as_ref(), txt.as_ref())? {
            let probabilities = o.probabilities();
            out.push(Prediction {
                class: argmax(&probabilities),
                probabilities,
                gate: o.gate,
                attention: o.attention,
            });
        }
        start = end;
    }
    Ok(out)
}

type InputPair = (Option<Array2<f64>>, Option<Array2<f64>>);

fn inputs(model: &FusionModel, data: &EmbeddedDataset) -> Result<InputPair, TrainError> {
    let cfg = model.config;
    let image = if cfg.uses_image() {
        let img = data
            .image_for(cfg.image_variant())
            .ok_or_else(|| TrainError::Data(format!("{cfg} needs {} image embeddings", cfg.image_variant().as_str())))?;
        Some(img.clone())
    } else {
        None
    };
    let text = if cfg.uses_text() {
        Some(data.text.clone().ok_or_else(|| TrainError::Data(format!("{cfg} needs text embeddings")))?)
    } else {
        None
    };
    Ok((image, text))
}

/// Trains one single-model configuration. Validation macro-F1 drives the
/// plateau scheduler and early stopping; the best-epoch parameters are
/// returned.
pub fn train_fold(
    config: ModelConfigId,
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    cfg: &TrainConfig,
) -> Result<(TrainRecord, FusionModel), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let weights = compute_class_weights(&train.class_counts(), cfg.suppression_exponent)?;

    let mut head = HybridHeadConfig::new(train.num_classes);
    head.dropout_rate = cfg.dropout_rate;
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = FusionModel::new(&mut init, config, head)?;
    let trainable = model.trainable()?;
    let mut opt = AdamW::new(&model, &trainable, cfg.weight_decay);

    let (train_img, train_txt) = inputs(&model, train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut sched = SchedulerState::new(cfg.learning_rate);
    let mut stop = StopState::default();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.current_lr;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let img = train_img.as_ref().map(|a| a.select(Axis(0), batch));
            let txt = train_txt.as_ref().map(|a| a.select(Axis(0), batch));
            let targets: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let (logits, cache) = model.forward(img.as_ref(), txt.as_ref(), Some(&mut rng))?;
            let (loss, dlogits) = smoothed_weighted_ce_batch(&logits, &targets, &weights.weights, cfg.label_smoothing);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            let mut grad = model.zeroed();
            model.backward(&cache, &dlogits, &mut grad);
            opt.step(&mut model, &grad, lr);
            total += loss * batch.len() as f64;
        }

        let preds: Vec<usize> = predict_single(&model, val)?.iter().map(|p| p.class).collect();
        let f1 = macro_f1(&preds, &val.labels, val.num_classes);
        epochs.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            val_macro_f1: f1,
            lr,
        });

        stop = early_stop_step(&stop, f1, cfg);
        sched = scheduler_step(&sched, f1, cfg);
        if stop.improved {
            best = model.clone();
            best_epoch = epoch;
        }
        if stop.stop_flag {
            break;
        }
        log::debug!("{config} epoch {epoch}: loss {:.5} val macro-F1 {f1:.4} lr {lr:e}", total / train.len() as f64);
    }

    let stopped_epoch = epochs.len();
    Ok((
        TrainRecord {
            epochs,
            stopped_epoch,
            best_epoch,
            class_weights: weights,
        },
        best,
    ))
}

/// Trains any configuration, ensembles included: M5 soft-votes trained
/// M1 and M2, M6 bags M4 with k = 3.
pub fn train_model(
    config: ModelConfigId,
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, Vec<TrainRecord>), TrainError> {
    match config {
        ModelConfigId::M5 => {
            let (e, records) = Ensemble::train_soft_vote(config, &[ModelConfigId::M1, ModelConfigId::M2], train, val, cfg)?;
            Ok((TrainedModel::Ensemble(e), records))
        }
        ModelConfigId::M6 => {
            let (e, records) = bagging_train(ModelConfigId::M4, 3, train, val, cfg.seed, cfg)?;
            Ok((TrainedModel::Ensemble(e), records))
        }
        _ => {
            let (record, model) = train_fold(config, train, val, cfg)?;
            Ok((TrainedModel::Single(model), vec![record]))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub records: Vec<TrainRecord>,
    pub report: MetricsReport,
    pub val_ids: Vec<String>,
    pub predictions: Vec<Prediction>,
    pub model: TrainedModel,
}

/// For each fold `i`, trains on the other folds and evaluates on fold `i`.
/// Folds run in parallel; results come back in fold order.
pub fn run_cv(
    config: ModelConfigId,
    data: &EmbeddedDataset,
    folds: &FoldAssignment,
    cfg: &TrainConfig,
) -> Result<Vec<FoldResult>, TrainError> {
    let mut fold_of = Vec::with_capacity(data.len());
    for id in &data.ids {
        fold_of.push(
            folds
                .fold_of(id)
                .ok_or_else(|| TrainError::Data(format!("sample `{id}` has no fold assignment")))?,
        );
    }
    (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] != fold).collect();
            let val_idx: Vec<usize> = (0..data.len()).filter(|&i| fold_of[i] == fold).collect();
            let train = data.subset(&train_idx);
            let val = data.subset(&val_idx);
            let (model, records) = train_model(config, &train, &val, cfg)?;
            let predictions = model.predict(&val)?;
            let preds: Vec<usize> = predictions.iter().map(|p| p.class).collect();
            let report = evaluate(&preds, &val.labels, val.num_classes).map_err(|e| TrainError::Data(e.to_string()))?;
            Ok(FoldResult {
                fold,
                records,
                report,
                val_ids: val.ids,
                predictions,
                model,
            })
        })
        .collect()
}
