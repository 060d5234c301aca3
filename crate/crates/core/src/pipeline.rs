//! Manifest → embeddings plumbing shared by the CLI and the FFI layer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{CorpusError, DatasetManifest, MemeSample};
use crate::encoders::{
    cache_key, image_encoder, text_encoder, Backend, EmbeddingCache, EncoderError, EncoderSpec, ImageEncoder,
    TextEncoder, IMAGE_EMBED_DIM, TEXT_EMBED_DIM,
};
use crate::fusion::ImageVariant;
use crate::preprocess::{
    confident_boxes, decode_image, fnv1a, preprocess_image, remove_text_regions, to_rgb, tokenize_text,
    HashedSubwordTokenizer, PreprocessConfig, PreprocessError, TextBox, TokenizedText,
};
use crate::training::EmbeddedDataset;

const TOKENIZER_TAG: &str = "hashed-subword-v1";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sample `{id}`: {message}")]
    Image { id: String, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Encoder pair for a run. Pretrained backends are not built into this
/// crate, so asking for them falls back to the toy encoders with a warning.
#[derive(Debug, Clone)]
pub struct EncoderChoice {
    pub image: EncoderSpec,
    pub text: EncoderSpec,
    pub warnings: Vec<String>,
}

pub fn resolve_encoders(toy: bool, seed: u64) -> EncoderChoice {
    let mut warnings = Vec::new();
    let mut image = EncoderSpec::toy_image(seed);
    let mut text = EncoderSpec::toy_text(seed);
    if !toy {
        let mut pre_img = image.clone();
        pre_img.backend = Backend::PretrainedImage;
        let mut pre_txt = text.clone();
        pre_txt.backend = Backend::PretrainedText;
        match image_encoder(&pre_img) {
            Ok(_) => image = pre_img,
            Err(e) => warnings.push(format!("{e}; using toy image encoder")),
        }
        match text_encoder(&pre_txt) {
            Ok(_) => text = pre_txt,
            Err(e) => warnings.push(format!("{e}; using toy text encoder")),
        }
    }
    EncoderChoice { image, text, warnings }
}

pub fn tokenize_sample(sample: &MemeSample, cfg: &PreprocessConfig) -> TokenizedText {
    tokenize_text(&sample.ocr_text, &HashedSubwordTokenizer::default(), cfg.max_text_len)
}

fn text_key(spec: &EncoderSpec, sample: &MemeSample, cfg: &PreprocessConfig) -> String {
    let desc = format!(
        "text|{TOKENIZER_TAG}|max_len={}|seed={}|{:016x}",
        cfg.max_text_len,
        spec.seed,
        fnv1a(sample.ocr_text.as_bytes())
    );
    cache_key(spec.backend, &sample.id, &desc)
}

fn image_key(spec: &EncoderSpec, id: &str, variant: ImageVariant, bytes: &[u8], cfg: &PreprocessConfig) -> String {
    let desc = format!(
        "image|{}|size={}|seed={}|{:016x}",
        variant.as_str(),
        cfg.image_size,
        spec.seed,
        fnv1a(bytes)
    );
    cache_key(spec.backend, id, &desc)
}

fn encode_one_text(
    enc: &dyn TextEncoder,
    spec: &EncoderSpec,
    sample: &MemeSample,
    cfg: &PreprocessConfig,
    cache: &EmbeddingCache,
) -> Result<(String, Vec<f32>, bool), PipelineError> {
    let key = text_key(spec, sample, cfg);
    if let Some(v) = cache.get(&key) {
        return Ok((key, v.to_vec(), false));
    }
    let v = enc.encode(&tokenize_sample(sample, cfg))?.vector;
    Ok((key, v, true))
}

fn encode_one_image(
    enc: &dyn ImageEncoder,
    spec: &EncoderSpec,
    sample: &MemeSample,
    variant: ImageVariant,
    cfg: &PreprocessConfig,
    cache: &EmbeddingCache,
) -> Result<(String, Vec<f32>, bool), PipelineError> {
    let bytes = std::fs::read(&sample.image_path).map_err(|e| PipelineError::Image {
        id: sample.id.clone(),
        message: format!("{}: {e}", sample.image_path.display()),
    })?;
    let key = image_key(spec, &sample.id, variant, &bytes, cfg);
    if let Some(v) = cache.get(&key) {
        return Ok((key, v.to_vec(), false));
    }
    let img = decode_image(&bytes, &sample.id)?;
    let tensor = preprocess_image(&img, &sample.id, cfg.image_size)?;
    Ok((key, enc.encode(&tensor)?.vector, true))
}

fn to_matrix(rows: &[Vec<f32>], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in m.rows_mut().into_iter().zip(rows) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = f64::from(s);
        }
    }
    m
}

/// What to embed.
#[derive(Debug, Clone)]
pub struct EmbedRequest<'a> {
    pub manifest: &'a DatasetManifest,
    /// Same ids as `manifest`, pointing at text-removed images.
    pub text_removed: Option<&'a DatasetManifest>,
    pub text: bool,
    pub image: bool,
    /// When false, unlabeled samples get class 0 (prediction-only runs).
    pub require_labels: bool,
}

/// Embeds every sample, reusing and filling `cache`. Encoding runs in
/// parallel; row order follows the manifest.
pub fn embed_manifest(
    req: &EmbedRequest<'_>,
    encoders: &EncoderChoice,
    cfg: &PreprocessConfig,
    cache: &mut EmbeddingCache,
) -> Result<EmbeddedDataset, PipelineError> {
    let m = req.manifest;
    let labels = match m.labels() {
        Ok(l) => l,
        Err(e) if req.require_labels => return Err(e.into()),
        Err(_) => m.samples.iter().map(|s| s.label(m.task).unwrap_or(0)).collect(),
    };

    let text = if req.text {
        let enc = text_encoder(&encoders.text)?;
        let shared: &EmbeddingCache = cache;
        let rows: Vec<(String, Vec<f32>, bool)> = m
            .samples
            .par_iter()
            .map(|s| encode_one_text(enc.as_ref(), &encoders.text, s, cfg, shared))
            .collect::<Result<_, _>>()?;
        Some(store(cache, rows, TEXT_EMBED_DIM))
    } else {
        None
    };

    let mut images = |manifest: &DatasetManifest, variant: ImageVariant| -> Result<Array2<f64>, PipelineError> {
        let enc = image_encoder(&encoders.image)?;
        let by_id: HashMap<&str, &MemeSample> = manifest.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let ordered: Vec<&MemeSample> = m
            .samples
            .iter()
            .map(|s| {
                by_id.get(s.id.as_str()).copied().ok_or_else(|| PipelineError::Image {
                    id: s.id.clone(),
                    message: format!("missing from the {} image manifest", variant.as_str()),
                })
            })
            .collect::<Result<_, _>>()?;
        let shared: &EmbeddingCache = cache;
        let rows: Vec<(String, Vec<f32>, bool)> = ordered
            .par_iter()
            .map(|s| encode_one_image(enc.as_ref(), &encoders.image, s, variant, cfg, shared))
            .collect::<Result<_, _>>()?;
        Ok(store(cache, rows, IMAGE_EMBED_DIM))
    };
    let image = if req.image { Some(images(m, ImageVariant::Original)?) } else { None };
    let image_text_removed = match req.text_removed {
        Some(tr) if req.image => Some(images(tr, ImageVariant::TextRemoved)?),
        _ => None,
    };

    Ok(EmbeddedDataset {
        ids: m.samples.iter().map(|s| s.id.clone()).collect(),
        labels,
        num_classes: m.task.num_classes(),
        text,
        image,
        image_text_removed,
    })
}

fn store(cache: &mut EmbeddingCache, rows: Vec<(String, Vec<f32>, bool)>, dim: usize) -> Array2<f64> {
    let vectors: Vec<Vec<f32>> = rows
        .into_iter()
        .map(|(key, v, fresh)| {
            if fresh {
                cache.insert(key, v.clone());
            }
            v
        })
        .collect();
    to_matrix(&vectors, dim)
}

/// File-system-safe rendering of a sample id.
pub fn file_stem_for(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{clean}_{:08x}", fnv1a(id.as_bytes()) as u32)
}

/// Writes the text-removed variant of every image into `out_dir` as PNG and
/// returns the manifest pointing at them. Samples without boxes are copied
/// through the same decode/encode path unchanged.
pub fn write_text_removed_variant(
    manifest: &DatasetManifest,
    boxes: &HashMap<String, Vec<TextBox>>,
    min_confidence: f64,
    out_dir: &Path,
) -> Result<DatasetManifest, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let samples: Vec<MemeSample> = manifest
        .samples
        .par_iter()
        .map(|s| {
            let bytes = std::fs::read(&s.image_path).map_err(|e| PipelineError::Image {
                id: s.id.clone(),
                message: format!("{}: {e}", s.image_path.display()),
            })?;
            let rgb = to_rgb(&decode_image(&bytes, &s.id)?);
            let kept = confident_boxes(boxes.get(&s.id).map_or(&[][..], Vec::as_slice), min_confidence);
            let cleaned = remove_text_regions(&rgb, &kept);
            let path = out_dir.join(format!("{}.png", file_stem_for(&s.id)));
            cleaned.save(&path).map_err(|e| PipelineError::Image {
                id: s.id.clone(),
                message: e.to_string(),
            })?;
            Ok(MemeSample {
                image_path: path,
                ..s.clone()
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(DatasetManifest::new(samples, manifest.task)?)
}
