//! Raster → normalized `3×S×S` tensor.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use ndarray::Array3;

use super::PreprocessError;

pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    /// Channel-major `(3, size, size)`.
    pub values: Array3<f32>,
    pub source_id: String,
}

impl ImageTensor {
    pub fn size(&self) -> usize {
        self.values.shape()[1]
    }
}

pub fn load_image(path: &Path, id: &str) -> Result<DynamicImage, PreprocessError> {
    image::open(path).map_err(|e| PreprocessError::Decode {
        id: id.to_string(),
        message: format!("{}: {e}", path.display()),
    })
}

pub fn decode_image(bytes: &[u8], id: &str) -> Result<DynamicImage, PreprocessError> {
    image::load_from_memory(bytes).map_err(|e| PreprocessError::Decode {
        id: id.to_string(),
        message: e.to_string(),
    })
}

/// RGB view of any raster. Gray is replicated across channels; alpha is
/// composited over white.
pub fn to_rgb(image: &DynamicImage) -> RgbImage {
    if !image.color().has_alpha() {
        return image.to_rgb8();
    }
    let rgba = image.to_rgba8();
    RgbImage::from_fn(rgba.width(), rgba.height(), |x, y| {
        let p = rgba.get_pixel(x, y).0;
        let a = u32::from(p[3]);
        let blend = |c: u8| ((u32::from(c) * a + 255 * (255 - a) + 127) / 255) as u8;
        image::Rgb([blend(p[0]), blend(p[1]), blend(p[2])])
    })
}

/// Shorter edge to `size`, then the centered `size×size` window. Images whose
/// shorter edge already equals `size` are only cropped.
pub fn resize_and_crop(rgb: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = rgb.dimensions();
    let short = w.min(h);
    let resized;
    let src = if short == size {
        rgb
    } else {
        let scale = f64::from(size) / f64::from(short);
        let nw = ((f64::from(w) * scale).round() as u32).max(size);
        let nh = ((f64::from(h) * scale).round() as u32).max(size);
        resized = imageops::resize(rgb, nw, nh, FilterType::CatmullRom);
        &resized
    };
    let (w, h) = src.dimensions();
    let left = (w - size) / 2;
    let top = (h - size) / 2;
    imageops::crop_imm(src, left, top, size, size).to_image()
}

pub fn normalize(rgb: &RgbImage, source_id: &str) -> ImageTensor {
    let (w, h) = rgb.dimensions();
    let mut values = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            let v = f32::from(p.0[c]) / 255.0;
            values[[c, y as usize, x as usize]] = (v - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
        }
    }
    ImageTensor {
        values,
        source_id: source_id.to_string(),
    }
}

/// Inverse of [`normalize`] for one value, back to `[0, 1]` intensity.
pub fn denormalize(value: f32, channel: usize) -> f32 {
    value * CHANNEL_STD[channel] + CHANNEL_MEAN[channel]
}

pub fn preprocess_image(image: &DynamicImage, source_id: &str, size: u32) -> Result<ImageTensor, PreprocessError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(PreprocessError::Decode {
            id: source_id.to_string(),
            message: "zero-sized raster".into(),
        });
    }
    let rgb = to_rgb(image);
    Ok(normalize(&resize_and_crop(&rgb, size), source_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, Rgba, RgbaImage};

    #[test]
    fn uniform_gray_closed_form() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(300, 260, Rgb([128, 128, 128])));
        let t = preprocess_image(&img, "g", 224).unwrap();
        assert_eq!(t.values.shape(), &[3, 224, 224]);
        let v = 128.0f32 / 255.0;
        let expect = [0.0741f32, 0.2052, 0.4265];
        for c in 0..3 {
            let closed = (v - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
            assert!((closed - expect[c]).abs() < 1e-4);
            for &x in t.values.index_axis(ndarray::Axis(0), c).iter() {
                assert!((x - closed).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wide_image_crops_horizontal_center() {
        let src = RgbImage::from_fn(448, 224, |x, y| Rgb([(x % 256) as u8, (x / 256) as u8, y as u8]));
        let out = resize_and_crop(&src, 224);
        assert_eq!(out.dimensions(), (224, 224));
        for y in (0..224).step_by(17) {
            for x in (0..224).step_by(13) {
                assert_eq!(out.get_pixel(x, y), src.get_pixel(x + 112, y));
            }
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let g = DynamicImage::ImageLuma8(GrayImage::from_pixel(224, 224, Luma([200])));
        let rgb = to_rgb(&g);
        assert!(rgb.pixels().all(|p| p.0 == [200, 200, 200]));
        let t = preprocess_image(&g, "g", 224).unwrap();
        assert_eq!(t.values.shape(), &[3, 224, 224]);
    }

    #[test]
    fn alpha_composited_on_white() {
        let img = DynamicImage::ImageRgba8(RgbaImage::from_pixel(4, 4, Rgba([0, 0, 0, 0])));
        assert!(to_rgb(&img).pixels().all(|p| p.0 == [255, 255, 255]));
        let img = DynamicImage::ImageRgba8(RgbaImage::from_pixel(4, 4, Rgba([10, 20, 30, 255])));
        assert!(to_rgb(&img).pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn geometric_stage_is_idempotent_at_target_size() {
        let src = RgbImage::from_fn(224, 224, |x, y| Rgb([x as u8, y as u8, (x ^ y) as u8]));
        assert_eq!(resize_and_crop(&src, 224), src);
        let once = resize_and_crop(&RgbImage::from_fn(500, 320, |x, y| Rgb([x as u8, y as u8, 7])), 224);
        assert_eq!(resize_and_crop(&once, 224), once);
    }

    #[test]
    fn small_image_upscales() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([9, 9, 9])));
        let t = preprocess_image(&img, "tiny", 224).unwrap();
        assert_eq!(t.values.shape(), &[3, 224, 224]);
        assert!(t.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalization_inverts_within_one_level() {
        for level in [0u8, 1, 77, 128, 254, 255] {
            let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(224, 224, Rgb([level; 3])));
            let t = preprocess_image(&img, "u", 224).unwrap();
            for c in 0..3 {
                let back = denormalize(t.values[[c, 100, 100]], c);
                assert!((back - f32::from(level) / 255.0).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn undecodable_bytes_carry_sample_id() {
        let err = decode_image(b"not an image", "meme-17").unwrap_err();
        assert!(err.to_string().contains("meme-17"));
    }
}
