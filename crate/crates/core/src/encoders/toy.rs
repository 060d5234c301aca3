use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{l2_normalize, EncoderError, ImageEmbedding, ImageEncoder, TextEmbedding, TextEncoder};
use super::{IMAGE_EMBED_DIM, TEXT_EMBED_DIM};
use crate::preprocess::{ImageTensor, TokenizedText};

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bag-of-token-ids histogram pushed through a seeded Gaussian random
/// projection, then L2-normalized. Each token id owns an independent
/// 1024-d direction drawn on demand, so no vocabulary-sized matrix is stored.
#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    seed: u64,
}

impl ToyTextEncoder {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn token_direction(&self, token: u32) -> impl Iterator<Item = f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(u64::from(token))));
        (0..TEXT_EMBED_DIM).map(move |_| StandardNormal.sample(&mut rng))
    }
}

impl TextEncoder for ToyTextEncoder {
    fn encode(&self, tokens: &TokenizedText) -> Result<TextEmbedding, EncoderError> {
        let mut counts = std::collections::BTreeMap::<u32, f64>::new();
        for t in tokens.active_ids() {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut acc = vec![0.0f64; TEXT_EMBED_DIM];
        for (&token, &count) in &counts {
            for (a, r) in acc.iter_mut().zip(self.token_direction(token)) {
                *a += count * r;
            }
        }
        Ok(TextEmbedding {
            vector: l2_normalize(&acc),
        })
    }
}

/// Cells per image side for the patch statistics.
pub const IMAGE_GRID: usize = 8;
const IMAGE_FEATURES: usize = 3 * IMAGE_GRID * IMAGE_GRID * 2;

/// Per-cell, per-channel mean and variance over an 8×8 grid (384 features),
/// projected to 512 dims by a seeded Gaussian matrix plus bias.
#[derive(Debug, Clone)]
pub struct ToyImageEncoder {
    projection: Array2<f64>,
    bias: Array1<f64>,
}

impl ToyImageEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x1a2e_5eed));
        let scale = 1.0 / (IMAGE_FEATURES as f64).sqrt();
        let projection = Array2::from_shape_simple_fn((IMAGE_EMBED_DIM, IMAGE_FEATURES), || {
            scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let bias = Array1::from_shape_simple_fn(IMAGE_EMBED_DIM, || 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        Self { projection, bias }
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    /// Layout: channel, grid row, grid column, then (mean, variance).
    pub fn patch_statistics(image: &ImageTensor) -> Array1<f64> {
        let (_, h, w) = image.values.dim();
        let mut feats = Array1::zeros(IMAGE_FEATURES);
        let mut k = 0;
        for c in 0..3 {
            for gy in 0..IMAGE_GRID {
                let (y0, y1) = (gy * h / IMAGE_GRID, ((gy + 1) * h / IMAGE_GRID).max(gy * h / IMAGE_GRID + 1));
                for gx in 0..IMAGE_GRID {
                    let (x0, x1) = (gx * w / IMAGE_GRID, ((gx + 1) * w / IMAGE_GRID).max(gx * w / IMAGE_GRID + 1));
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    let mut n = 0.0;
                    for y in y0..y1.min(h) {
                        for x in x0..x1.min(w) {
                            let v = f64::from(image.values[[c, y, x]]);
                            sum += v;
                            sq += v * v;
                            n += 1.0;
                        }
                    }
                    let (mean, var) = if n > 0.0 {
                        let m = sum / n;
                        (m, (sq / n - m * m).max(0.0))
                    } else {
                        (0.0, 0.0)
                    };
                    feats[k] = mean;
                    feats[k + 1] = var;
                    k += 2;
                }
            }
        }
        feats
    }
}

impl ImageEncoder for ToyImageEncoder {
    fn encode(&self, image: &ImageTensor) -> Result<ImageEmbedding, EncoderError> {
        let feats = Self::patch_statistics(image);
        let out = self.projection.dot(&feats) + &self.bias;
        Ok(ImageEmbedding {
            vector: out.iter().map(|&v| v as f32).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{tokenize_text, HashedSubwordTokenizer};
    use ndarray::Array3;
    use rand::Rng;

    fn tokens(text: &str) -> TokenizedText {
        tokenize_text(text, &HashedSubwordTokenizer::default(), 77)
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
        let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn text_embedding_contract() {
        let enc = ToyTextEncoder::new(42);
        for text in ["", "नमस्ते संसार", "#tag 😀 http://x.y/z", &"long ".repeat(200)] {
            let e = enc.encode(&tokens(text)).unwrap();
            assert_eq!(e.vector.len(), 1024);
            assert!((e.norm() - 1.0).abs() < 1e-5);
            assert!(e.vector.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn text_encoder_is_deterministic() {
        let a = ToyTextEncoder::new(7).encode(&tokens("एउटा वाक्य")).unwrap();
        let b = ToyTextEncoder::new(7).encode(&tokens("एउटा वाक्य")).unwrap();
        assert_eq!(a, b);
        let c = ToyTextEncoder::new(8).encode(&tokens("एउटा वाक्य")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn distinct_sequences_are_not_collinear() {
        // 1000 random pairs of distinct token sequences.
        let enc = ToyTextEncoder::new(42);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst: f64 = -1.0;
        for _ in 0..1000 {
            let mut a = tokens("");
            let mut b = tokens("");
            let n = rng.random_range(1..10);
            for i in 0..n {
                a.token_ids[1 + i] = rng.random_range(4..250_002);
                a.attention_mask[1 + i] = 1;
            }
            b.token_ids = a.token_ids.clone();
            b.attention_mask = a.attention_mask.clone();
            let j = rng.random_range(1..=n);
            b.token_ids[j] = rng.random_range(4..250_002);
            if a.token_ids == b.token_ids {
                continue;
            }
            let ea = enc.encode(&a).unwrap();
            let eb = enc.encode(&b).unwrap();
            worst = worst.max(cosine(&ea.vector, &eb.vector));
        }
        assert!(worst < 0.999, "max cosine {worst}");
    }

    fn tensor(values: Array3<f32>) -> ImageTensor {
        ImageTensor {
            values,
            source_id: "t".into(),
        }
    }

    #[test]
    fn zero_image_maps_to_bias() {
        let enc = ToyImageEncoder::new(3);
        let e = enc.encode(&tensor(Array3::zeros((3, 224, 224)))).unwrap();
        assert_eq!(e.vector.len(), 512);
        for (v, b) in e.vector.iter().zip(enc.bias()) {
            assert_eq!(*v, *b as f32);
        }
    }

    #[test]
    fn one_patch_difference_changes_embedding() {
        let enc = ToyImageEncoder::new(3);
        let base = Array3::from_shape_fn((3, 224, 224), |(c, y, x)| ((c + y * 3 + x) % 17) as f32 / 17.0);
        let mut altered = base.clone();
        for y in 0..28 {
            for x in 196..224 {
                altered[[1, y, x]] += 0.5;
            }
        }
        // Patch-statistic oracle: exactly the mean feature of (channel 1, row 0, col 7) moves.
        let fa = ToyImageEncoder::patch_statistics(&tensor(base.clone()));
        let fb = ToyImageEncoder::patch_statistics(&tensor(altered.clone()));
        let moved: Vec<usize> = (0..fa.len()).filter(|&i| (fa[i] - fb[i]).abs() > 1e-9).collect();
        assert_eq!(moved, vec![(64 + 7) * 2]);
        let ea = enc.encode(&tensor(base)).unwrap();
        let eb = enc.encode(&tensor(altered)).unwrap();
        assert_ne!(ea, eb);
    }
}
