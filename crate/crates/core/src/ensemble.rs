//! Late fusion: soft voting over independently trained models (M5) and
//! bagging over bootstrap resamples (M6).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::splitmix64;
use crate::eval::Prediction;
use crate::fusion::{argmax, load_checkpoint, save_checkpoint, FusionModel, ModelConfigId};
use crate::training::{train_fold, EmbeddedDataset, TrainConfig, TrainError, TrainRecord};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("no members to vote over")]
    Empty,
    #[error("member {index} has {got} classes, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("not a probability vector: {0:?}")]
    InvalidProbabilities(Vec<f64>),
    #[error("bagging needs k >= 1, got {0}")]
    InvalidK(usize),
    #[error("invalid ensemble: {0}")]
    InvalidSpec(String),
    #[error("ensemble checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, EnsembleError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(EnsembleError::InvalidProbabilities(probs));
        }
        Ok(Self { probs })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Unweighted mean of the member distributions. The running-mean form
/// returns a member bit-exactly when all members are identical.
pub fn soft_vote(members: &[ProbVector]) -> Result<ProbVector, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::Empty)?;
    let k = first.probs.len();
    let mut mean = first.probs.clone();
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.probs.len() != k {
            return Err(EnsembleError::DimensionMismatch {
                index: i,
                expected: k,
                got: m.probs.len(),
            });
        }
        for (acc, &p) in mean.iter_mut().zip(&m.probs) {
            *acc += (p - *acc) / (i + 1) as f64;
        }
    }
    Ok(ProbVector { probs: mean })
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Share of `0..n` that appears at least once in `sample`.
pub fn unique_fraction(sample: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    sample.iter().collect::<HashSet<_>>().len() as f64 / n as f64
}

/// Jaccard index of the two samples' unique index sets.
pub fn bootstrap_overlap(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    SoftVote,
    Bagging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberDescriptor {
    pub config: ModelConfigId,
    pub seed: u64,
    /// Bagging only: seed of the member's bootstrap draw.
    pub bootstrap_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    /// The configuration this ensemble realizes (M5 or M6).
    pub config: ModelConfigId,
    pub kind: EnsembleKind,
    pub members: Vec<MemberDescriptor>,
    pub k: Option<usize>,
    pub seed: u64,
    /// Size of the training set the bootstraps were drawn from.
    pub train_size: Option<usize>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        match self.kind {
            EnsembleKind::SoftVote if self.members.len() < 2 => {
                Err(EnsembleError::InvalidSpec("soft voting needs at least 2 members".into()))
            }
            EnsembleKind::Bagging => match self.k {
                None | Some(0) => Err(EnsembleError::InvalidK(self.k.unwrap_or(0))),
                Some(k) if k != self.members.len() => Err(EnsembleError::InvalidSpec(format!(
                    "k = {k} but {} members listed",
                    self.members.len()
                ))),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Member bootstrap index lists, when known.
    pub fn bootstraps(&self) -> Option<Vec<Vec<usize>>> {
        let n = self.train_size?;
        self.members
            .iter()
            .map(|m| m.bootstrap_seed.map(|s| bootstrap_indices(n, s)))
            .collect()
    }

    /// Mean pairwise Jaccard overlap of the member bootstraps.
    pub fn mean_bootstrap_overlap(&self) -> Option<f64> {
        let boots = self.bootstraps()?;
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..boots.len() {
            for j in i + 1..boots.len() {
                total += bootstrap_overlap(&boots[i], &boots[j]);
                pairs += 1;
            }
        }
        (pairs > 0).then(|| total / pairs as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub members: Vec<FusionModel>,
}

const MANIFEST_FILE: &str = "ensemble.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: EnsembleSpec,
    member_files: Vec<String>,
}

impl Ensemble {
    pub fn new(spec: EnsembleSpec, members: Vec<FusionModel>) -> Result<Self, EnsembleError> {
        spec.validate()?;
        if spec.members.len() != members.len() {
            return Err(EnsembleError::InvalidSpec(format!(
                "{} descriptors for {} models",
                spec.members.len(),
                members.len()
            )));
        }
        Ok(Self { spec, members })
    }

    /// Soft vote of the members' probabilities; no gates.
    pub fn predict(&self, data: &EmbeddedDataset) -> Result<Vec<Prediction>, TrainError> {
        let per_member: Vec<Vec<Prediction>> = self
            .members
            .iter()
            .map(|m| crate::training::TrainedModel::Single(m.clone()).predict(data))
            .collect::<Result<_, _>>()?;
        (0..data.len())
            .map(|i| {
                let votes: Vec<ProbVector> = per_member
                    .iter()
                    .map(|p| ProbVector {
                        probs: p[i].probabilities.clone(),
                    })
                    .collect();
                let v = soft_vote(&votes)?;
                Ok(Prediction {
                    class: v.argmax(),
                    probabilities: v.probs,
                    gate: None,
                    attention: None,
                })
            })
            .collect()
    }

    /// Trains each listed configuration on the same data and soft-votes them.
    pub fn train_soft_vote(
        config: ModelConfigId,
        members: &[ModelConfigId],
        train: &EmbeddedDataset,
        val: &EmbeddedDataset,
        cfg: &TrainConfig,
    ) -> Result<(Self, Vec<TrainRecord>), TrainError> {
        let trained: Vec<(TrainRecord, FusionModel)> = members
            .par_iter()
            .map(|&m| train_fold(m, train, val, cfg))
            .collect::<Result<_, _>>()?;
        let spec = EnsembleSpec {
            config,
            kind: EnsembleKind::SoftVote,
            members: members
                .iter()
                .map(|&c| MemberDescriptor {
                    config: c,
                    seed: cfg.seed,
                    bootstrap_seed: None,
                })
                .collect(),
            k: None,
            seed: cfg.seed,
            train_size: None,
        };
        let (records, models) = trained.into_iter().unzip();
        Ok((Self::new(spec, models)?, records))
    }

    pub fn save(&self, dir: &Path) -> Result<(), EnsembleError> {
        let io = |e: std::io::Error| EnsembleError::Checkpoint(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut member_files = Vec::new();
        for (i, (m, d)) in self.members.iter().zip(&self.spec.members).enumerate() {
            let name = format!("member_{i}.ckpt");
            save_checkpoint(m, d.seed, &dir.join(&name)).map_err(|e| EnsembleError::Checkpoint(e.to_string()))?;
            member_files.push(name);
        }
        let manifest = Manifest {
            spec: self.spec.clone(),
            member_files,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| EnsembleError::Checkpoint(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json).map_err(io)
    }

    pub fn load(dir: &Path) -> Result<Self, EnsembleError> {
        let bad = |m: String| EnsembleError::Checkpoint(m);
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| bad(format!("{}: {e}", dir.display())))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let members = manifest
            .member_files
            .iter()
            .map(|f| load_checkpoint(&dir.join(f)).map(|(m, _)| m).map_err(|e| bad(e.to_string())))
            .collect::<Result<_, _>>()?;
        Self::new(manifest.spec, members)
    }

    pub fn is_checkpoint_dir(path: &Path) -> bool {
        path.join(MANIFEST_FILE).is_file()
    }
}

/// Trains `k` copies of `base`, each on its own bootstrap resample of
/// `train`, and combines them by soft voting.
pub fn bagging_train(
    base: ModelConfigId,
    k: usize,
    train: &EmbeddedDataset,
    val: &EmbeddedDataset,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(Ensemble, Vec<TrainRecord>), TrainError> {
    if k < 1 {
        return Err(EnsembleError::InvalidK(k).into());
    }
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    let members: Vec<MemberDescriptor> = (0..k as u64)
        .map(|i| MemberDescriptor {
            config: base,
            seed: splitmix64(seed ^ splitmix64(2 * i)),
            bootstrap_seed: Some(splitmix64(seed ^ splitmix64(2 * i + 1))),
        })
        .collect();
    let trained: Vec<(TrainRecord, FusionModel)> = members
        .par_iter()
        .map(|d| {
            let idx = bootstrap_indices(train.len(), d.bootstrap_seed.expect("bagging member"));
            let member_cfg = TrainConfig {
                seed: d.seed,
                ..cfg.clone()
            };
            train_fold(base, &train.subset(&idx), val, &member_cfg)
        })
        .collect::<Result<_, _>>()?;
    let spec = EnsembleSpec {
        config: ModelConfigId::M6,
        kind: EnsembleKind::Bagging,
        members,
        k: Some(k),
        seed,
        train_size: Some(train.len()),
    };
    let (records, models) = trained.into_iter().unzip();
    Ok((Ensemble::new(spec, models)?, records))
}
