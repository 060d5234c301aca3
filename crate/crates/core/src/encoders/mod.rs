//! Encoder output contracts, backends and layer-freeze policies.
//!
//! Image embeddings are 512-d; text embeddings are 1024-d and unit-norm.
//! Pretrained backends sit behind the [`ImageEncoder`] / [`TextEncoder`]
//! capability traits and are not compiled into this crate; asking for one
//! yields [`EncoderError::BackendUnavailable`]. The toy backends are
//! deterministic, weight-free stand-ins used for pipeline testing.

mod cache;
mod freeze;
mod toy;

use serde::{Deserialize, Serialize};

use crate::preprocess::{ImageTensor, TokenizedText};

pub use cache::{cache_key, EmbeddingCache};
pub use freeze::{apply_freeze_policy, EncoderStack, EncoderStackCache, FreezePolicy, StackLayer};
pub use toy::{ToyImageEncoder, ToyTextEncoder, IMAGE_GRID};
pub(crate) use toy::splitmix64;

pub const IMAGE_EMBED_DIM: usize = 512;
pub const TEXT_EMBED_DIM: usize = 1024;
pub const IMAGE_ENCODER_LAYERS: usize = 12;
pub const TEXT_ENCODER_LAYERS: usize = 24;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder backend `{0}` is not available in this build")]
    BackendUnavailable(Backend),
    #[error("backend `{backend}` cannot encode {modality}")]
    WrongModality { backend: Backend, modality: &'static str },
    #[error("output_dim {got} does not match the {expected}-d contract")]
    BadOutputDim { got: usize, expected: usize },
    #[error("layer {layer} out of range 1..={total}")]
    LayerOutOfRange { layer: usize, total: usize },
    #[error("policy covers {policy} layers but encoder has {encoder}")]
    LayerCountMismatch { policy: usize, encoder: usize },
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    PretrainedImage,
    PretrainedText,
    ToyImage,
    ToyText,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::PretrainedImage => "pretrained_image",
            Backend::PretrainedText => "pretrained_text",
            Backend::ToyImage => "toy_image",
            Backend::ToyText => "toy_text",
        }
    }

    pub fn is_text(self) -> bool {
        matches!(self, Backend::PretrainedText | Backend::ToyText)
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
}

impl TextEmbedding {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEmbedding {
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backend: Backend,
    pub output_dim: usize,
    pub freeze: FreezePolicy,
    pub seed: u64,
}

impl EncoderSpec {
    /// Top 2 of 12 layers trainable.
    pub fn toy_image(seed: u64) -> Self {
        Self {
            backend: Backend::ToyImage,
            output_dim: IMAGE_EMBED_DIM,
            freeze: FreezePolicy::image_default(),
            seed,
        }
    }

    /// Top 4 of 24 layers trainable.
    pub fn toy_text(seed: u64) -> Self {
        Self {
            backend: Backend::ToyText,
            output_dim: TEXT_EMBED_DIM,
            freeze: FreezePolicy::text_default(),
            seed,
        }
    }

    fn check_dim(&self) -> Result<(), EncoderError> {
        let expected = if self.backend.is_text() { TEXT_EMBED_DIM } else { IMAGE_EMBED_DIM };
        if self.output_dim != expected {
            return Err(EncoderError::BadOutputDim {
                got: self.output_dim,
                expected,
            });
        }
        Ok(())
    }
}

pub trait TextEncoder: Send + Sync {
    fn encode(&self, tokens: &TokenizedText) -> Result<TextEmbedding, EncoderError>;
}

pub trait ImageEncoder: Send + Sync {
    fn encode(&self, image: &ImageTensor) -> Result<ImageEmbedding, EncoderError>;
}

pub fn text_encoder(spec: &EncoderSpec) -> Result<Box<dyn TextEncoder>, EncoderError> {
    spec.check_dim()?;
    match spec.backend {
        Backend::ToyText => Ok(Box::new(ToyTextEncoder::new(spec.seed))),
        Backend::PretrainedText => Err(EncoderError::BackendUnavailable(spec.backend)),
        b => Err(EncoderError::WrongModality {
            backend: b,
            modality: "text",
        }),
    }
}

pub fn image_encoder(spec: &EncoderSpec) -> Result<Box<dyn ImageEncoder>, EncoderError> {
    spec.check_dim()?;
    match spec.backend {
        Backend::ToyImage => Ok(Box::new(ToyImageEncoder::new(spec.seed))),
        Backend::PretrainedImage => Err(EncoderError::BackendUnavailable(spec.backend)),
        b => Err(EncoderError::WrongModality {
            backend: b,
            modality: "images",
        }),
    }
}

pub fn encode_text(tokens: &TokenizedText, spec: &EncoderSpec) -> Result<TextEmbedding, EncoderError> {
    text_encoder(spec)?.encode(tokens)
}

pub fn encode_image(image: &ImageTensor, spec: &EncoderSpec) -> Result<ImageEmbedding, EncoderError> {
    image_encoder(spec)?.encode(image)
}

/// Scales `v` to unit L2 norm in `f64`, then rounds to `f32`.
pub(crate) fn l2_normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        let mut out = vec![0.0; v.len()];
        if let Some(first) = out.first_mut() {
            *first = 1.0;
        }
        return out;
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}
