//! On-disk embedding store.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MFEC" version
//! repeat: key_len key_bytes(utf-8) n f32[n]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{Backend, EncoderError};

const MAGIC: &[u8; 4] = b"MFEC";
const VERSION: u32 = 1;

/// `backend/sample_id/digest`, where `digest` is the first 16 hex chars of
/// SHA-256 over the preprocessing description.
pub fn cache_key(backend: Backend, sample_id: &str, preprocessing: &str) -> String {
    let digest = Sha256::digest(preprocessing.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("{}/{sample_id}/{hex}", backend.as_str())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: String, vector: Vec<f32>) {
        self.entries.insert(key, vector);
    }

    /// Missing file → empty cache.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        match File::open(path) {
            Ok(f) => Self::read_from(BufReader::new(f)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(EncoderError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let f = File::create(path).map_err(|e| EncoderError::Cache(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| EncoderError::Cache(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (key, v) in &self.entries {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EncoderError> {
        let bad = |m: &str| EncoderError::Cache(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not an embedding cache"));
        }
        let version = read_u32(&mut r)?.ok_or_else(|| bad("truncated header"))?;
        if version != VERSION {
            return Err(EncoderError::Cache(format!("unsupported version {version}")));
        }
        let mut entries = IndexMap::new();
        while let Some(key_len) = read_u32(&mut r)? {
            let mut key = vec![0u8; key_len as usize];
            r.read_exact(&mut key).map_err(|_| bad("truncated key"))?;
            let key = String::from_utf8(key).map_err(|_| bad("key is not utf-8"))?;
            let n = read_u32(&mut r)?.ok_or_else(|| bad("truncated length"))? as usize;
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated vector"))?;
            let v = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.insert(key, v);
        }
        Ok(Self { entries })
    }
}

/// `None` at a clean end of stream.
fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>, EncoderError> {
    let mut buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(EncoderError::Cache("truncated integer".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(EncoderError::Cache(e.to_string())),
        }
    }
    Ok(Some(u32::from_le_bytes(buf)))
}
