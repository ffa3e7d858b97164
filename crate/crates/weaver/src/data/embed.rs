//! Word embedding tables: pretrained text-format vectors or a learned
//! table initialized from the run seed.
//!
//! Row 0 is the padding vector (all zero) and row 1 is the
//! out-of-vocabulary vector; real words start at row 2. With pretrained
//! vectors the whole table — OOV row included — is frozen; a learned
//! table is a trainable parameter.

use super::{DataError, Token};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
/// Number of reserved rows before real words.
pub const RESERVED_ROWS: usize = 2;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Real words in row order; word `i` lives at row `i + RESERVED_ROWS`.
    pub words: Vec<String>,
    index: HashMap<String, usize>,
    /// [RESERVED_ROWS + words.len(), dim]
    pub vectors: Tensor<f32>,
    /// Learned tables train; pretrained tables are frozen.
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Build a trainable table over `words` (deduplicated, sorted for
    /// determinism). Vectors are Gaussian with variance 1/dim; the
    /// padding row stays zero.
    pub fn learned<I: IntoIterator<Item = String>>(words: I, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut words: Vec<String> = words.into_iter().collect();
        words.sort();
        words.dedup();
        let rows = RESERVED_ROWS + words.len();
        let mut data = vec![0.0f32; rows * dim];
        let std = (1.0 / dim as f64).sqrt();
        for v in data.iter_mut().skip(OOV_ID * dim) {
            *v = (crate::rng::normal(rng) * std) as f32;
        }
        let vectors = Tensor::new(vec![rows, dim], data);
        Self::assemble(dim, words, vectors, true)
    }

    /// Load a pretrained text-format table: one `token v1 .. v_dim` line
    /// per word, with an optional `count dim` header auto-detected from
    /// the first line. The OOV vector is drawn once from `oov_rng` and
    /// frozen with the rest of the table.
    pub fn pretrained_from_text(path: &Path, oov_rng: &mut ChaCha8Rng) -> Result<Self, DataError> {
        let shown = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut words = Vec::new();
        let mut values: Vec<f32> = Vec::new();
        let mut dim = None::<usize>;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| DataError::Io {
                path: shown.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            // Header detection: a first line of exactly two integers.
            if lineno == 0
                && fields.len() == 2
                && fields.iter().all(|f| f.parse::<u64>().is_ok())
            {
                continue;
            }
            if fields.len() < 2 {
                return Err(DataError::Malformed {
                    path: shown,
                    message: format!("line {}: expected a token and vector values", lineno + 1),
                });
            }
            let d = fields.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(expect) if expect != d => {
                    return Err(DataError::Malformed {
                        path: shown,
                        message: format!(
                            "line {}: vector has {} values, expected {}",
                            lineno + 1,
                            d,
                            expect
                        ),
                    });
                }
                _ => {}
            }
            words.push(fields[0].to_string());
            for f in &fields[1..] {
                let v: f32 = f.parse().map_err(|_| DataError::Malformed {
                    path: shown.clone(),
                    message: format!("line {}: bad float {:?}", lineno + 1, f),
                })?;
                values.push(v);
            }
        }
        let dim = dim.ok_or_else(|| DataError::Malformed {
            path: shown.clone(),
            message: "no embedding rows found".to_string(),
        })?;
        let rows = RESERVED_ROWS + words.len();
        let mut data = vec![0.0f32; rows * dim];
        let std = (1.0 / dim as f64).sqrt();
        for v in data[OOV_ID * dim..(OOV_ID + 1) * dim].iter_mut() {
            *v = (crate::rng::normal(oov_rng) * std) as f32;
        }
        data[RESERVED_ROWS * dim..].copy_from_slice(&values);
        let vectors = Tensor::new(vec![rows, dim], data);
        Ok(Self::assemble(dim, words, vectors, false))
    }

    /// Rebuild a table from checkpointed pieces.
    pub fn from_parts(dim: usize, words: Vec<String>, vectors: Tensor<f32>, trainable: bool) -> Self {
        assert_eq!(
            vectors.shape(),
            &[RESERVED_ROWS + words.len(), dim],
            "embedding matrix shape does not match the word list"
        );
        Self::assemble(dim, words, vectors, trainable)
    }

    fn assemble(dim: usize, words: Vec<String>, vectors: Tensor<f32>, trainable: bool) -> Self {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            // First occurrence wins when a pretrained file repeats a word.
            index.entry(w.clone()).or_insert(RESERVED_ROWS + i);
        }
        EmbeddingTable {
            dim,
            words,
            index,
            vectors,
            trainable,
        }
    }

    /// Row id for a token: exact match, then lowercase, else OOV.
    pub fn id(&self, text: &str, lower: &str) -> usize {
        if let Some(&i) = self.index.get(text) {
            return i;
        }
        if let Some(&i) = self.index.get(lower) {
            return i;
        }
        OOV_ID
    }

    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(&t.text, &t.lower)).collect()
    }

    pub fn rows(&self) -> usize {
        RESERVED_ROWS + self.words.len()
    }
}
