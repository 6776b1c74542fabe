//! Binary checkpoint container.
//!
//! Layout: magic `RANC`, `u32` format version, `u64` metadata length, UTF-8
//! JSON metadata, then every tensor of [`SequenceModel::tensors`] in order as
//! row-major little-endian `f64`. All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::predict::{Lexicon, Predictor};
use super::train::{TrainConfig, TrainHistory};
use super::{ModelDims, ModelError, SequenceModel};
use crate::corpus::{ActionKind, Vocab};
use crate::embed::{EmbeddingProvider, HashedEmbedder};

/// Embedder id stored for [`HashedEmbedder`].
pub const HASHED_EMBEDDER: &str = "hashed";

const MAGIC: &[u8; 4] = b"RANC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    dims: ModelDims,
    train_config: Option<TrainConfig>,
    corpus_seed: Option<u64>,
    vocab: Vec<ActionKind>,
    lexicon: Lexicon,
    embedder: String,
    history: Option<TrainHistory>,
    tensors: Vec<TensorMeta>,
}

/// A model plus the provenance needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SequenceModel,
    pub train_config: Option<TrainConfig>,
    pub corpus_seed: Option<u64>,
    pub vocab: Vocab,
    pub lexicon: Lexicon,
    /// Embedder identifier, e.g. `hashed`.
    pub embedder: String,
    pub history: Option<TrainHistory>,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let meta = Metadata {
            dims: self.model.dims,
            train_config: self.train_config.clone(),
            corpus_seed: self.corpus_seed,
            vocab: self.vocab.kinds().to_vec(),
            lexicon: self.lexicon.clone(),
            embedder: self.embedder.clone(),
            history: self.history.clone(),
            tensors: self
                .model
                .tensors()
                .iter()
                .map(|(n, t)| TensorMeta { name: n.to_string(), shape: [t.nrows(), t.ncols()] })
                .collect(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| err(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in self.model.tensors() {
            buf.clear();
            buf.reserve(t.len() * 8);
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| err("truncated header"))?;
        if &magic != MAGIC {
            return Err(err("not a checkpoint file (bad magic)"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| err("truncated header"))?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(err(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| err("truncated header"))?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| err("truncated metadata"))?;
        let meta: Metadata = serde_json::from_slice(&json).map_err(|e| err(e.to_string()))?;
        meta.dims.validate()?;
        let mut model = SequenceModel::zeros(meta.dims);
        let expected: Vec<(String, [usize; 2])> = model
            .tensors()
            .iter()
            .map(|(n, t)| (n.to_string(), [t.nrows(), t.ncols()]))
            .collect();
        if expected.len() != meta.tensors.len()
            || expected.iter().zip(&meta.tensors).any(|((n, s), m)| *n != m.name || *s != m.shape)
        {
            return Err(err("tensor table does not match model dimensions"));
        }
        for t in model.tensors_mut() {
            let mut bytes = vec![0u8; t.len() * 8];
            r.read_exact(&mut bytes).map_err(|_| err("truncated tensor data"))?;
            let values: Vec<f64> =
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            *t = Array2::from_shape_vec(t.raw_dim(), values).map_err(|e| err(e.to_string()))?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(err("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            model,
            train_config: meta.train_config,
            corpus_seed: meta.corpus_seed,
            vocab: Vocab::new(meta.vocab)?,
            lexicon: meta.lexicon,
            embedder: meta.embedder,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let f = std::fs::File::open(path)?;
        Checkpoint::read_from(std::io::BufReader::new(f))
    }

    /// Wraps the model with the embedder it was trained with.
    pub fn into_predictor(self) -> Result<Predictor, ModelError> {
        let provider: Box<dyn EmbeddingProvider> = match self.embedder.as_str() {
            HASHED_EMBEDDER => Box::new(HashedEmbedder { dim: self.model.dims.input }),
            other => return Err(err(format!("embedder `{other}` cannot be rebuilt from a checkpoint"))),
        };
        Ok(Predictor { model: self.model, provider, vocab: self.vocab, lexicon: self.lexicon })
    }
}
