//! Blurring detected text regions out of an image.
//!
//! OCR runs elsewhere; boxes arrive through a box file with rows
//! `id, x, y, w, h, confidence`.

use std::collections::HashMap;
use std::io::Read;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::PreprocessError;

/// Pixels added on each side of a box before blurring.
pub const BOX_DILATION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    #[cfg(test)]
    pub(crate) fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

impl TextBox {
    /// Intersection with a `width×height` image grown by `pad`; `None` when empty.
    pub(crate) fn clamp(&self, width: u32, height: u32, pad: u32) -> Option<Rect> {
        let pad = i64::from(pad);
        let x0 = (self.x - pad).clamp(0, i64::from(width));
        let y0 = (self.y - pad).clamp(0, i64::from(height));
        let x1 = (self.x + self.w.max(1) + pad).clamp(0, i64::from(width));
        let y1 = (self.y + self.h.max(1) + pad).clamp(0, i64::from(height));
        (x1 > x0 && y1 > y0).then_some(Rect {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        })
    }
}

/// `σ = max(3, min(w, h) / 4)` over the clamped box.
pub fn blur_sigma(w: u32, h: u32) -> f64 {
    (f64::from(w.min(h)) / 4.0).max(3.0)
}

/// Odd length `≥ 6σ + 1`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let mut n = (6.0 * sigma + 1.0).ceil() as usize;
    if n.is_multiple_of(2) {
        n += 1;
    }
    let r = (n / 2) as f64;
    let mut k: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable blur of `src` restricted to `rect`, edge pixels replicated.
fn blur_rect(src: &RgbImage, rect: Rect, kernel: &[f64], out: &mut RgbImage) {
    let (w, h) = src.dimensions();
    let r = (kernel.len() / 2) as i64;
    let clamp = |v: i64, hi: u32| v.clamp(0, i64::from(hi) - 1) as u32;

    // Horizontal pass over every row the vertical pass can reach.
    let ty0 = (i64::from(rect.y0) - r).max(0) as u32;
    let ty1 = (i64::from(rect.y1) + r).min(i64::from(h)) as u32;
    let rw = rect.width() as usize;
    let mut tmp = vec![[0.0f64; 3]; rw * (ty1 - ty0) as usize];
    for y in ty0..ty1 {
        for x in rect.x0..rect.x1 {
            let mut acc = [0.0; 3];
            for (k, &wk) in kernel.iter().enumerate() {
                let sx = clamp(i64::from(x) + k as i64 - r, w);
                let p = src.get_pixel(sx, y).0;
                for c in 0..3 {
                    acc[c] += wk * f64::from(p[c]);
                }
            }
            tmp[(y - ty0) as usize * rw + (x - rect.x0) as usize] = acc;
        }
    }

    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let mut acc = [0.0; 3];
            for (k, &wk) in kernel.iter().enumerate() {
                let sy = clamp(i64::from(y) + k as i64 - r, h);
                let v = tmp[(sy - ty0) as usize * rw + (x - rect.x0) as usize];
                for c in 0..3 {
                    acc[c] += wk * v[c];
                }
            }
            let px = acc.map(|v| v.round().clamp(0.0, 255.0) as u8);
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
}

/// Replaces every box (dilated by [`BOX_DILATION`]) with a Gaussian blur of the
/// input. Each box is blurred from the original pixels; where boxes overlap the
/// later box wins. Pixels outside all dilated boxes are copied unchanged.
pub fn remove_text_regions(image: &RgbImage, boxes: &[TextBox]) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = image.dimensions();
    for b in boxes {
        let Some(core) = b.clamp(w, h, 0) else { continue };
        let Some(rect) = b.clamp(w, h, BOX_DILATION) else { continue };
        let kernel = gaussian_kernel(blur_sigma(core.width(), core.height()));
        blur_rect(image, rect, &kernel, &mut out);
    }
    out
}

/// Boxes at or above `min_confidence`.
pub fn confident_boxes(boxes: &[TextBox], min_confidence: f64) -> Vec<TextBox> {
    boxes
        .iter()
        .copied()
        .filter(|b| b.confidence >= min_confidence)
        .collect()
}

/// Parses a box file into per-sample box lists. A leading `id,...` header row
/// is tolerated.
pub fn parse_box_file<R: Read>(input: R) -> Result<HashMap<String, Vec<TextBox>>, PreprocessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let mut boxes: HashMap<String, Vec<TextBox>> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| PreprocessError::BoxFile { line, message: e.to_string() })?;
        if rec.len() != 6 {
            return Err(PreprocessError::BoxFile {
                line,
                message: format!("expected 6 fields, got {}", rec.len()),
            });
        }
        if i == 0 && &rec[0] == "id" {
            continue;
        }
        let int = |j: usize| -> Result<i64, PreprocessError> {
            rec[j].parse().map_err(|_| PreprocessError::BoxFile {
                line,
                message: format!("field {} `{}` is not an integer", j + 1, &rec[j]),
            })
        };
        let confidence: f64 = rec[5].parse().map_err(|_| PreprocessError::BoxFile {
            line,
            message: format!("confidence `{}` is not a number", &rec[5]),
        })?;
        let b = TextBox {
            x: int(1)?,
            y: int(2)?,
            w: int(3)?,
            h: int(4)?,
            confidence,
        };
        if b.w < 1 || b.h < 1 || !(0.0..=1.0).contains(&b.confidence) {
            return Err(PreprocessError::BoxFile {
                line,
                message: "box extents must be ≥ 1 and confidence in [0, 1]".into(),
            });
        }
        boxes.entry(rec[0].to_string()).or_default().push(b);
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb([
                ((x * 7 + y * 3) % 256) as u8,
                ((x * x + y) % 251) as u8,
                if (x / 5 + y / 5) % 2 == 0 { 240 } else { 15 },
            ])
        })
    }

    // Direct 2-D convolution with replicated edges; independent of the
    // two-pass implementation.
    fn reference_blur(src: &RgbImage, sigma: f64) -> RgbImage {
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let (w, h) = src.dimensions();
        RgbImage::from_fn(w, h, |x, y| {
            let mut acc = [0.0f64; 3];
            for (j, &kj) in k.iter().enumerate() {
                let sy = (i64::from(y) + j as i64 - r).clamp(0, i64::from(h) - 1) as u32;
                for (i, &ki) in k.iter().enumerate() {
                    let sx = (i64::from(x) + i as i64 - r).clamp(0, i64::from(w) - 1) as u32;
                    let p = src.get_pixel(sx, sy).0;
                    for c in 0..3 {
                        acc[c] += ki * kj * f64::from(p[c]);
                    }
                }
            }
            Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(3.0);
        assert_eq!(k.len(), 19);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_kernel(3.2).len(), 21);
        assert_eq!(blur_sigma(50, 20), 5.0);
        assert_eq!(blur_sigma(8, 100), 3.0);
    }

    #[test]
    fn empty_box_list_is_identity() {
        let img = textured(64, 40);
        assert_eq!(remove_text_regions(&img, &[]), img);
    }

    #[test]
    fn full_image_box_equals_reference_blur() {
        let img = textured(48, 36);
        let b = TextBox { x: 0, y: 0, w: 48, h: 36, confidence: 0.9 };
        let out = remove_text_regions(&img, &[b]);
        assert_eq!(out.dimensions(), img.dimensions());
        let reference = reference_blur(&img, blur_sigma(48, 36));
        for (a, b) in out.pixels().zip(reference.pixels()) {
            for c in 0..3 {
                assert!((i16::from(a.0[c]) - i16::from(b.0[c])).abs() <= 1);
            }
        }
    }

    #[test]
    fn corner_box_leaves_outside_untouched() {
        let img = textured(120, 90);
        let b = TextBox { x: 70, y: 70, w: 50, h: 20, confidence: 1.0 };
        let out = remove_text_regions(&img, &[b]);
        assert_eq!(out.dimensions(), img.dimensions());
        let dilated = b.clamp(120, 90, BOX_DILATION).unwrap();
        let mut changed = 0;
        for (x, y, p) in out.enumerate_pixels() {
            if dilated.contains(x, y) {
                changed += usize::from(p != img.get_pixel(x, y));
            } else {
                assert_eq!(p, img.get_pixel(x, y), "({x},{y})");
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn second_pass_only_touches_boxes() {
        let img = textured(80, 80);
        let boxes = [
            TextBox { x: 5, y: 5, w: 20, h: 10, confidence: 0.8 },
            TextBox { x: 50, y: 30, w: 25, h: 40, confidence: 0.7 },
        ];
        let once = remove_text_regions(&img, &boxes);
        let twice = remove_text_regions(&once, &boxes);
        let rects: Vec<_> = boxes.iter().map(|b| b.clamp(80, 80, BOX_DILATION).unwrap()).collect();
        for (x, y, p) in twice.enumerate_pixels() {
            if !rects.iter().any(|r| r.contains(x, y)) {
                assert_eq!(p, once.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn boxes_outside_image_are_ignored() {
        let img = textured(30, 30);
        let b = TextBox { x: 100, y: 100, w: 5, h: 5, confidence: 1.0 };
        assert_eq!(remove_text_regions(&img, &[b]), img);
    }

    #[test]
    fn low_confidence_filtered() {
        let boxes = [
            TextBox { x: 0, y: 0, w: 1, h: 1, confidence: 0.49 },
            TextBox { x: 0, y: 0, w: 1, h: 1, confidence: 0.5 },
        ];
        assert_eq!(confident_boxes(&boxes, 0.5).len(), 1);
    }

    #[test]
    fn box_file_parsing() {
        let src = "id,x,y,w,h,confidence\nm1, 3, 4, 10, 6, 0.9\nm1,0,0,2,2,0.3\nm2,1,1,1,1,1\n";
        let boxes = parse_box_file(src.as_bytes()).unwrap();
        assert_eq!(boxes["m1"].len(), 2);
        assert_eq!(boxes["m1"][0], TextBox { x: 3, y: 4, w: 10, h: 6, confidence: 0.9 });
        assert_eq!(boxes["m2"].len(), 1);
        assert!(parse_box_file("m1,1,1,0,1,0.5\n".as_bytes()).is_err());
        assert!(parse_box_file("m1,1,1\n".as_bytes()).is_err());
    }
}
