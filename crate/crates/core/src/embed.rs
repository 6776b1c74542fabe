//! Offline instruction embeddings.
//!
//! The default provider hashes word unigrams and bigrams into `d` signed
//! buckets and L2-normalizes the result. A file-backed provider serves
//! precomputed vectors keyed by the hash of the normalized instruction.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::Array2;
use thiserror::Error;

/// Default embedding width, matching the model's input layer.
pub const DEFAULT_DIM: usize = 1024;

/// Salt mixed into every feature hash. Changing it changes every embedding.
pub const HASH_SALT: u64 = 0x5eed_1a2b_c3d4_e5f6;

const FILE_MAGIC: &[u8; 4] = b"RANE";
const FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("instruction is empty after normalization")]
    EmptyInput,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("no precomputed embedding for instruction `{0}`")]
    Missing(String),
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// `L × d` matrix whose rows all equal the source embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledEmbedding {
    pub rows: Array2<f64>,
}

/// Maps instruction text to a fixed-width vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, instruction: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// 64-bit FNV-1a over the salt followed by the bytes.
fn fnv1a(salt: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in salt.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    // Final avalanche so nearby keys spread over the low bits used for buckets.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Key used by the precomputed-embedding file.
pub fn instruction_key(text: &str) -> u64 {
    fnv1a(HASH_SALT, normalize_tokens(text).join(" ").as_bytes())
}

pub fn embed_text(instruction: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::ZeroDim);
    }
    let tokens = normalize_tokens(instruction);
    if tokens.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let mut values = vec![0.0; dim];
    let mut add = |feature: &str| {
        let h = fnv1a(HASH_SALT, feature.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    };
    for t in &tokens {
        add(&format!("u:{t}"));
    }
    for w in tokens.windows(2) {
        add(&format!("b:{} {}", w[0], w[1]));
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every feature cancelled; fall back to the unsigned bucket counts.
        for t in &tokens {
            values[(fnv1a(HASH_SALT, t.as_bytes()) % dim as u64) as usize] += 1.0;
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EmbeddingVector { values })
}

pub fn tile_embedding(e: &EmbeddingVector, len: usize) -> TiledEmbedding {
    assert!(len >= 1, "tile length must be at least 1");
    let row = ndarray::ArrayView1::from(&e.values[..]);
    let rows = Array2::from_shape_fn((len, e.dim()), |(_, j)| row[j]);
    TiledEmbedding { rows }
}

/// Signed feature-hashing embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: DEFAULT_DIM }
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instruction: &str) -> Result<EmbeddingVector, EmbedError> {
        embed_text(instruction, self.dim)
    }
}

/// Precomputed vectors keyed by [`instruction_key`].
///
/// File layout (all little-endian): magic `RANE`, `u32` version, `u32` dim,
/// `u64` record count, then per record a `u64` key followed by `dim` `f64`s.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    dim: usize,
    table: HashMap<u64, Vec<f64>>,
}

impl FileEmbeddings {
    pub fn new(dim: usize) -> Self {
        FileEmbeddings { dim, table: HashMap::new() }
    }

    pub fn insert(&mut self, instruction: &str, vector: EmbeddingVector) -> Result<(), EmbedError> {
        if vector.dim() != self.dim {
            return Err(EmbedError::Format(format!(
                "vector has dim {}, table expects {}",
                vector.dim(),
                self.dim
            )));
        }
        self.table.insert(instruction_key(instruction), vector.values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbedError> {
        w.write_all(FILE_MAGIC)?;
        w.write_all(&FILE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.table.len() as u64).to_le_bytes())?;
        let mut keys: Vec<_> = self.table.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            w.write_all(&k.to_le_bytes())?;
            for v in &self.table[&k] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbedError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FILE_MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FILE_VERSION {
            return Err(EmbedError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8);
        let mut table = HashMap::new();
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            let key = u64::from_le_bytes(b8);
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut b8)?;
                v.push(f64::from_le_bytes(b8));
            }
            table.insert(key, v);
        }
        Ok(FileEmbeddings { dim, table })
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, instruction: &str) -> Result<EmbeddingVector, EmbedError> {
        if normalize_tokens(instruction).is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        self.table
            .get(&instruction_key(instruction))
            .map(|v| EmbeddingVector { values: v.clone() })
            .ok_or_else(|| EmbedError::Missing(instruction.to_string()))
    }
}
