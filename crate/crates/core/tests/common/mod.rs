#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 16] = [
    "river", "window", "paper", "cloud", "market", "yellow", "garden", "engine", "silver", "forest", "morning",
    "pocket", "bridge", "candle", "ladder", "basket",
];

/// Which modality carries the label of a synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    Text,
    Image,
}

pub struct Synthetic {
    pub manifest: PathBuf,
    pub labels: Vec<u8>,
    pub carriers: Vec<Carrier>,
}

fn noise_image(rng: &mut ChaCha8Rng, size: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |_, _| {
        let g = 110 + rng.random_range(0..36u8);
        Rgb([g, g, g])
    })
}

/// Class 1 paints the top half red, class 0 the bottom half blue.
fn label_image(rng: &mut ChaCha8Rng, size: u32, label: u8) -> RgbImage {
    let mut img = noise_image(rng, size);
    for (_, y, p) in img.enumerate_pixels_mut() {
        let jitter = rng.random_range(0..20u8);
        if label == 1 && y < size / 2 {
            *p = Rgb([220 + jitter / 2, 30 + jitter, 30]);
        } else if label == 0 && y >= size / 2 {
            *p = Rgb([30, 40 + jitter, 210 + jitter / 2]);
        }
    }
    img
}

fn filler(rng: &mut ChaCha8Rng, words: usize) -> Vec<&'static str> {
    (0..words).map(|_| *FILLER.choose(rng).unwrap()).collect()
}

/// Writes `n` samples (PNG images plus `manifest.jsonl`) into `dir`. The
/// first half carries its label in the text (keyword `alpha` vs `omega`, noise
/// image); the second half in the image (red top vs blue bottom, filler text).
/// Labels alternate within each half.
pub fn mixed_modality(dir: &Path, n: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir.join("images")).unwrap();
    let mut manifest = String::new();
    let mut labels = Vec::with_capacity(n);
    let mut carriers = Vec::with_capacity(n);
    for i in 0..n {
        let carrier = if i < n / 2 { Carrier::Text } else { Carrier::Image };
        let label = (i % 2) as u8;
        let (img, words) = match carrier {
            Carrier::Text => {
                let mut words = filler(&mut rng, 6);
                let at = rng.random_range(0..=words.len());
                words.insert(at, if label == 1 { "alpha" } else { "omega" });
                (noise_image(&mut rng, 32), words)
            }
            Carrier::Image => (label_image(&mut rng, 32, label), filler(&mut rng, 7)),
        };
        let rel = format!("images/s{i:04}.png");
        img.save(dir.join(&rel)).unwrap();
        let record = serde_json::json!({
            "id": format!("s{i:04}"),
            "image_path": rel,
            "text": words.join(" "),
            "label_a": label,
        });
        writeln!(manifest, "{record}").unwrap();
        labels.push(label);
        carriers.push(carrier);
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest).unwrap();
    Synthetic {
        manifest: path,
        labels,
        carriers,
    }
}

/// Training settings for the small synthetic runs.
pub fn fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        "learning_rate = 1e-3\nmax_epochs = 40\nstop_patience = 8\nlr_patience = 4\nbatch_size = 16\n",
    )
    .unwrap();
    path
}
