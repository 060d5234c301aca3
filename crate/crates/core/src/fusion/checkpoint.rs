//! Model checkpoint file.
//!
//! ```text
//! "MFCK" u32 version u32 header_len header(json, utf-8)
//! then, per tensor in header order: f32[len] little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FusionError, FusionModel, HybridHeadConfig, ModelConfigId};
use crate::encoders::FreezePolicy;
use crate::nn::Parameters;

const MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfigId,
    head_config: HybridHeadConfig,
    seed: u64,
    image_freeze: FreezePolicy,
    text_freeze: FreezePolicy,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn err(m: impl Into<String>) -> FusionError {
    FusionError::Checkpoint(m.into())
}

pub fn write_checkpoint<W: Write>(model: &FusionModel, seed: u64, w: &mut W) -> Result<(), FusionError> {
    let params = model.params();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config,
        head_config: model.head_config.clone(),
        seed,
        image_freeze: model.image_freeze.clone(),
        text_freeze: model.text_freeze.clone(),
        tensors: params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.data.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    let io = |e: std::io::Error| err(e.to_string());
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for p in &params {
        let mut buf = Vec::with_capacity(p.data.len() * 4);
        for &v in p.data.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

/// Returns the model and the seed it was trained with.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(FusionModel, u64), FusionError> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| err("truncated header"))?;
    if &word != MAGIC {
        return Err(err("not a model checkpoint"));
    }
    r.read_exact(&mut word).map_err(|_| err("truncated header"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut word).map_err(|_| err("truncated header"))?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json).map_err(|_| err("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| err(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(header.seed);
    let mut model = FusionModel::with_freeze(
        &mut rng,
        header.config,
        header.head_config,
        header.image_freeze,
        header.text_freeze,
    )?;
    {
        let params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(err(format!(
                "expected {} tensors, header lists {}",
                params.len(),
                header.tensors.len()
            )));
        }
        for (p, entry) in params.into_iter().zip(&header.tensors) {
            if p.name != entry.name || p.data.shape() != entry.shape.as_slice() {
                return Err(err(format!("tensor `{}` does not match the model layout", entry.name)));
            }
            let mut bytes = vec![0u8; p.data.len() * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| err(format!("truncated tensor `{}`", entry.name)))?;
            let mut data = p.data;
            for (dst, c) in data.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
        }
    }
    Ok((model, header.seed))
}

pub fn save_checkpoint(model: &FusionModel, seed: u64, path: &Path) -> Result<(), FusionError> {
    let f = File::create(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(model, seed, &mut w)?;
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(FusionModel, u64), FusionError> {
    let f = File::open(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    read_checkpoint(&mut BufReader::new(f))
}
