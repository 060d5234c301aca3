//! Text tokenization, image normalization and the text-removed image variant.

mod raster;
mod text;
mod text_removal;

use serde::{Deserialize, Serialize};

pub use self::raster::{
    decode_image, denormalize, load_image, normalize, preprocess_image, resize_and_crop, to_rgb, ImageTensor,
    CHANNEL_MEAN, CHANNEL_STD,
};
pub use self::text::{tokenize_text, HashedSubwordTokenizer, SubwordTokenizer, TokenizedText};
pub(crate) use self::text::fnv1a;
pub use self::text_removal::{
    blur_sigma, confident_boxes, gaussian_kernel, parse_box_file, remove_text_regions, TextBox, BOX_DILATION,
};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("sample `{id}`: cannot decode image ({message})")]
    Decode { id: String, message: String },
    #[error("box file line {line}: {message}")]
    BoxFile { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub max_text_len: usize,
    pub image_size: u32,
    pub box_confidence_min: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_text_len: 77,
            image_size: 224,
            box_confidence_min: 0.5,
        }
    }
}
