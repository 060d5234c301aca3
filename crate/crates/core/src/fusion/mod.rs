//! Classification heads for the single-model configurations.
//!
//! | id | head | inputs |
//! |----|------|--------|
//! | M1 | MLP | text |
//! | M2 | MLP | image (original) |
//! | M3 | MLP | image (text removed) |
//! | M4 | MLP over `[image; text]` (1536-d) | both |
//! | M7 | hybrid head | both, original images |
//! | M8 | hybrid head | both, text-removed images |
//!
//! M5 and M6 combine trained models and live in [`crate::ensemble`].

mod checkpoint;
mod classifier;
mod hybrid;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use classifier::{hidden_width, MlpCache, MlpClassifier};
pub use hybrid::{AttentionCache, CrossModalAttention, GateNetwork, HybridCache, HybridHead, LatentProjection};
pub use model::{FusionModel, Head, ModelCache};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("expected a {expected}-d input, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{config} needs the {modality} modality")]
    MissingModality { config: ModelConfigId, modality: &'static str },
    #[error("{0} is an ensemble configuration; build it through the ensemble module")]
    EnsembleConfig(ModelConfigId),
    #[error("invalid head configuration: {0}")]
    InvalidHeadConfig(String),
    #[error("unknown model configuration `{0}`")]
    UnknownConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageVariant {
    Original,
    TextRemoved,
}

impl ImageVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageVariant::Original => "original",
            ImageVariant::TextRemoved => "text_removed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelConfigId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl ModelConfigId {
    pub const ALL: [ModelConfigId; 8] = [
        ModelConfigId::M1,
        ModelConfigId::M2,
        ModelConfigId::M3,
        ModelConfigId::M4,
        ModelConfigId::M5,
        ModelConfigId::M6,
        ModelConfigId::M7,
        ModelConfigId::M8,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelConfigId::M1 => "M1",
            ModelConfigId::M2 => "M2",
            ModelConfigId::M3 => "M3",
            ModelConfigId::M4 => "M4",
            ModelConfigId::M5 => "M5",
            ModelConfigId::M6 => "M6",
            ModelConfigId::M7 => "M7",
            ModelConfigId::M8 => "M8",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelConfigId::M1 => "Text-Only Baseline",
            ModelConfigId::M2 => "Image-Only (Original Images)",
            ModelConfigId::M3 => "Image-Only (Text-Removed)",
            ModelConfigId::M4 => "Early Fusion (Concatenation)",
            ModelConfigId::M5 => "Late Fusion (Soft Voting)",
            ModelConfigId::M6 => "Late Fusion (Bagging, k=3)",
            ModelConfigId::M7 => "Hybrid Fusion (Cross-Attn + Gating)",
            ModelConfigId::M8 => "Hybrid Fusion (Text-Removed Images)",
        }
    }

    /// Which image set the configuration reads. Text-only M1 reports
    /// `Original` but never touches images.
    pub fn image_variant(self) -> ImageVariant {
        match self {
            ModelConfigId::M3 | ModelConfigId::M8 => ImageVariant::TextRemoved,
            _ => ImageVariant::Original,
        }
    }

    pub fn uses_image(self) -> bool {
        !matches!(self, ModelConfigId::M1)
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, ModelConfigId::M2 | ModelConfigId::M3)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, ModelConfigId::M5 | ModelConfigId::M6)
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, ModelConfigId::M7 | ModelConfigId::M8)
    }
}

impl fmt::Display for ModelConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelConfigId {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        ModelConfigId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| FusionError::UnknownConfig(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridHeadConfig {
    pub latent_dim: usize,
    pub num_heads: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl HybridHeadConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            latent_dim: 256,
            num_heads: 4,
            dropout_rate: 0.5,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidHeadConfig(m));
        if self.num_heads == 0 || self.latent_dim == 0 || !self.latent_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "latent_dim {} must be a positive multiple of num_heads {}",
                self.latent_dim, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub z_img: Vec<f64>,
    pub z_txt: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub g_img: f64,
    pub g_txt: f64,
}

/// Row `m` is the attention distribution of query token `m` over the key
/// tokens; index 0 is image, 1 is text.
pub type AttentionMap = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub logits: Vec<f64>,
    pub gate: Option<GateWeights>,
    /// One map per head.
    pub attention: Option<Vec<AttentionMap>>,
}

impl FusionOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        crate::nn::softmax(&self.logits)
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
