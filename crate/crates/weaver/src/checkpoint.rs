//! Model checkpoints: run config, vocabulary and every parameter tensor
//! in one binary file.
//!
//! Layout: magic `WVR1`, version u32, length-prefixed UTF-8 JSON
//! metadata, parameter count, then per parameter a length-prefixed
//! name, rank, dims (u64 each) and the raw little-endian 32-bit floats.
//! Weights round-trip bit-exactly; loading validates every shape against
//! the config before anything is handed back.

use crate::config::RunConfig;
use crate::data::EmbeddingTable;
use crate::model::{ModelConfig, ModelParams};
use crate::nn::ParamGroup;
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"WVR1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    BadVersion { path: String, found: u32 },
    #[error("{path}: corrupt checkpoint: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: checkpoint does not match its config: {message}")]
    Mismatch { path: String, message: String },
}

/// Everything needed to rebuild the model around the raw tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: RunConfig,
    /// Vocabulary in embedding-row order (reserved rows excluded).
    pub vocab: Vec<String>,
    /// Realized embedding width (pretrained files fix their own).
    pub embed_dim: usize,
    pub embeddings_trainable: bool,
    pub feature_width: usize,
    /// Answer words prepended to every context, in prefix order.
    pub prepend: Vec<String>,
    /// Dev metric of this snapshot, when training produced one.
    pub best_metric: Option<f64>,
}

impl CheckpointMeta {
    pub fn model_config(&self) -> ModelConfig {
        self.config.model_config(self.embed_dim, self.feature_width)
    }
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    /// Rebuild the embedding table this model was trained with.
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::from_parts(
            self.meta.embed_dim,
            self.meta.vocab.clone(),
            self.params.embeddings.clone(),
            self.meta.embeddings_trainable,
        )
    }
}

/// Name/tensor pairs in checkpoint order: the embedding matrix first
/// (persisted even when frozen), then the visitor walk of the encoder
/// and reader groups.
fn entries(params: &ModelParams<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out = vec![("embeddings".to_string(), params.embeddings.clone())];
    params
        .encoder
        .for_each("encoder", &mut |name, t| out.push((name.to_string(), t.clone())));
    params
        .reader
        .for_each("reader", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn checkpoint_save(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let meta_json = serde_json::to_vec(&ckpt.meta).expect("metadata serializes");
    let entries = entries(&ckpt.params);
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, tensor) in &entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let shown = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: shown.clone(),
        source,
    })?;
    file.write_all(&out).map_err(|source| CheckpointError::Io {
        path: shown,
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.to_string(),
                message: format!(
                    "unexpected end of file at byte {} (wanted {n} more)",
                    self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CheckpointError::Corrupt {
            path: self.path.to_string(),
            message: "string is not valid UTF-8".to_string(),
        })
    }
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let shown = path.display().to_string();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| CheckpointError::Io {
            path: shown.clone(),
            source,
        })?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: &shown,
    };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic { path: shown });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion {
            path: shown,
            found: version,
        });
    }
    let meta_json = r.string()?;
    let meta: CheckpointMeta =
        serde_json::from_str(&meta_json).map_err(|e| CheckpointError::Corrupt {
            path: shown.clone(),
            message: format!("metadata: {e}"),
        })?;
    let n_params = r.u64()? as usize;
    let mut loaded: HashMap<String, Tensor<f32>> = HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string()?;
        let rank = r.u64()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if loaded.insert(name.clone(), Tensor::new(shape, data)).is_some() {
            return Err(CheckpointError::Corrupt {
                path: shown,
                message: format!("duplicate parameter {name:?}"),
            });
        }
    }
    let trailing = buf.len() - r.pos;
    if trailing > 0 {
        return Err(CheckpointError::Corrupt {
            path: shown,
            message: format!("{trailing} trailing bytes"),
        });
    }

    // Rebuild a fresh parameter set of the declared architecture and
    // overwrite every tensor with its stored value, validating shapes.
    let cfg = meta.model_config();
    let rows = crate::data::RESERVED_ROWS + meta.vocab.len();
    let table = EmbeddingTable::from_parts(
        meta.embed_dim,
        meta.vocab.clone(),
        Tensor::zeros(&[rows, meta.embed_dim]),
        meta.embeddings_trainable,
    );
    let mut params = ModelParams::init(&cfg, &table, &mut ChaCha8Rng::seed_from_u64(0));
    let mut missing: Vec<String> = Vec::new();
    let mut shape_errors: Vec<String> = Vec::new();
    let mut used = 0usize;
    {
        let mut fill = |name: &str, t: &mut Tensor<f32>| match loaded.get(name) {
            Some(stored) if stored.shape() == t.shape() => {
                *t = stored.clone();
                used += 1;
            }
            Some(stored) => shape_errors.push(format!(
                "{name:?}: stored {:?} vs expected {:?}",
                stored.shape(),
                t.shape()
            )),
            None => missing.push(name.to_string()),
        };
        fill("embeddings", &mut params.embeddings);
        params.encoder.for_each_mut("encoder", &mut |n, t| fill(n, t));
        params.reader.for_each_mut("reader", &mut |n, t| fill(n, t));
    }
    let mismatch = |message: String| Err(CheckpointError::Mismatch {
        path: shown.clone(),
        message,
    });
    if !shape_errors.is_empty() {
        return mismatch(format!("shape mismatches: {}", shape_errors.join("; ")));
    }
    if !missing.is_empty() {
        return mismatch(format!("missing parameters: {}", missing.join(", ")));
    }
    if used != loaded.len() {
        return mismatch(format!(
            "{} stored parameters do not belong to this architecture",
            loaded.len() - used
        ));
    }
    Ok(Checkpoint { meta, params })
}
