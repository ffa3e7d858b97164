//! Document store and hashed-bigram TF-IDF retrieval.
//!
//! Documents live in a store sorted by id; the index hashes lowercased
//! unigrams and bigrams into 2²⁴ bins with FNV-1a and weights each bin
//! per document as log(1 + tf) · idf, with the 0.5-smoothed idf clamped
//! at zero. Queries score documents by sparse dot product. Everything is
//! deterministic: ties break toward the lowest doc id and rebuilding an
//! identical store produces a byte-identical file.

use crate::data::tokenize;
use serde::Deserialize;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Number of hash bins B.
pub const BIN_COUNT: u64 = 1 << 24;
const MAGIC: [u8; 4] = *b"WVIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: not an index file (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    BadVersion { path: String, found: u32 },
    #[error("{path}: corrupt index: {message}")]
    Corrupt { path: String, message: String },
}

// ── document store ──────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    /// Byte offsets where paragraphs start; always begins with 0. The
    /// ranges `starts[i]..starts[i+1]` (last one to `text.len()`)
    /// partition the text.
    pub paragraph_starts: Vec<usize>,
}

impl Document {
    fn new(id: String, title: String, text: String) -> Self {
        let paragraph_starts = paragraph_starts(&text);
        Document {
            id,
            title,
            text,
            paragraph_starts,
        }
    }

    /// Paragraph slices, trimmed of the blank-line separators, empty
    /// ones skipped.
    pub fn paragraphs(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.paragraph_starts.len());
        for (i, &start) in self.paragraph_starts.iter().enumerate() {
            let end = self
                .paragraph_starts
                .get(i + 1)
                .copied()
                .unwrap_or(self.text.len());
            let p = self.text[start..end].trim();
            if !p.is_empty() {
                out.push(p);
            }
        }
        out
    }
}

/// Paragraphs are separated by blank lines; a text without any forms one
/// paragraph.
fn paragraph_starts(text: &str) -> Vec<usize> {
    let mut starts = vec![0usize];
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\n' {
            // Scan the whitespace run; a second newline makes it a break.
            let mut j = i + 1;
            let mut newlines = 1;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                if bytes[j] == b'\n' {
                    newlines += 1;
                }
                j += 1;
            }
            if newlines >= 2 && j < bytes.len() {
                starts.push(j);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    starts
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocumentStore {
    /// Sorted by id.
    docs: Vec<Document>,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

impl DocumentStore {
    pub fn from_documents(docs: Vec<(String, String, String)>) -> Self {
        let mut docs: Vec<Document> = docs
            .into_iter()
            .map(|(id, title, text)| Document::new(id, title, text))
            .collect();
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in docs.windows(2) {
            assert_ne!(pair[0].id, pair[1].id, "duplicate document id {:?}", pair[0].id);
        }
        DocumentStore { docs }
    }

    /// Ingest a JSONL corpus: one `{"id", "title", "text"}` record per
    /// line. Blank lines are skipped; duplicate ids are rejected.
    pub fn from_jsonl(path: &Path) -> Result<Self, RetrieveError> {
        let shown = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| RetrieveError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut docs = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlRecord =
                serde_json::from_str(line).map_err(|e| RetrieveError::BadRecord {
                    path: shown.clone(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            docs.push(Document::new(rec.id, rec.title, rec.text));
        }
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in docs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(RetrieveError::BadRecord {
                    path: shown,
                    line: 0,
                    message: format!("duplicate document id {:?}", pair[0].id),
                });
            }
        }
        Ok(DocumentStore { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Document {
        &self.docs[idx]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.docs.binary_search_by(|d| d.id.as_str().cmp(id)).ok()
    }
}

// ── index ───────────────────────────────────────────────────────────────

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn term_bin(term: &str) -> u32 {
    (fnv1a(term.as_bytes()) & (BIN_COUNT - 1)) as u32
}

/// Per-bin term counts of a text: lowercased unigrams and consecutive
/// bigrams, returned sorted by bin.
fn term_counts(text: &str) -> Vec<(u32, u32)> {
    let tokens = tokenize(text);
    let mut bins: Vec<u32> = Vec::with_capacity(tokens.len() * 2);
    for t in &tokens {
        bins.push(term_bin(&t.lower));
    }
    for pair in tokens.windows(2) {
        bins.push(term_bin(&format!("{} {}", pair[0].lower, pair[1].lower)));
    }
    bins.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for b in bins {
        match out.last_mut() {
            Some((bin, count)) if *bin == b => *count += 1,
            _ => out.push((b, 1)),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfidfIndex {
    n_docs: usize,
    /// Document frequency per occupied bin, sorted by bin.
    bin_df: Vec<(u32, u32)>,
    /// Per document (store order), sorted (bin, weight) entries.
    doc_weights: Vec<Vec<(u32, f32)>>,
}

fn idf(n_docs: usize, df: u32) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
}

/// Build the TF-IDF index over every document's full text.
pub fn index_build(store: &DocumentStore) -> TfidfIndex {
    assert!(!store.is_empty(), "index_build: empty document store");
    let per_doc: Vec<Vec<(u32, u32)>> = store
        .docs
        .iter()
        .map(|d| term_counts(&d.text))
        .collect();
    // Document frequency by merging the per-doc sorted bin lists.
    let mut bin_df: Vec<(u32, u32)> = Vec::new();
    {
        let mut all: Vec<u32> = per_doc
            .iter()
            .flat_map(|counts| counts.iter().map(|&(b, _)| b))
            .collect();
        all.sort_unstable();
        for b in all {
            match bin_df.last_mut() {
                Some((bin, df)) if *bin == b => *df += 1,
                _ => bin_df.push((b, 1)),
            }
        }
    }
    let n_docs = store.len();
    let df_of = |bin: u32| -> u32 {
        let i = bin_df.binary_search_by_key(&bin, |&(b, _)| b).unwrap();
        bin_df[i].1
    };
    let doc_weights = per_doc
        .into_iter()
        .map(|counts| {
            counts
                .into_iter()
                .map(|(bin, tf)| {
                    let w = (1.0 + tf as f64).ln() * idf(n_docs, df_of(bin));
                    (bin, w as f32)
                })
                .collect()
        })
        .collect();
    TfidfIndex {
        n_docs,
        bin_df,
        doc_weights,
    }
}

impl TfidfIndex {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    fn df(&self, bin: u32) -> u32 {
        match self.bin_df.binary_search_by_key(&bin, |&(b, _)| b) {
            Ok(i) => self.bin_df[i].1,
            Err(_) => 0,
        }
    }
}

/// One retrieval hit: the document's index in the store, its id, and
/// the dot-product score.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieved {
    pub doc: usize,
    pub id: String,
    pub score: f32,
}

/// Score every document against `question` and return the best `k`
/// (fewer when the corpus is smaller), ties broken by lowest id.
pub fn retrieve_topk(
    index: &TfidfIndex,
    store: &DocumentStore,
    question: &str,
    k: usize,
) -> Vec<Retrieved> {
    assert!(k >= 1, "retrieve_topk: k must be >= 1");
    assert_eq!(index.n_docs, store.len(), "index does not match the store");
    // Query vector: same log(1+tf)·idf weighting, idf from the corpus.
    let query: Vec<(u32, f32)> = term_counts(question)
        .into_iter()
        .map(|(bin, tf)| {
            let w = (1.0 + tf as f64).ln() * idf(index.n_docs, index.df(bin));
            (bin, w as f32)
        })
        .collect();
    let mut scored: Vec<Retrieved> = index
        .doc_weights
        .iter()
        .enumerate()
        .map(|(doc, weights)| {
            // Two-pointer sparse dot product over sorted bin lists.
            let mut score = 0.0f32;
            let (mut i, mut j) = (0usize, 0usize);
            while i < query.len() && j < weights.len() {
                match query[i].0.cmp(&weights[j].0) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        score += query[i].1 * weights[j].1;
                        i += 1;
                        j += 1;
                    }
                }
            }
            Retrieved {
                doc,
                id: store.get(doc).id.clone(),
                score,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    scored
}

// ── persistence ─────────────────────────────────────────────────────────

fn w_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn w_str(out: &mut Vec<u8>, s: &str) {
    w_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrieveError> {
        if self.pos + n > self.buf.len() {
            return Err(RetrieveError::Corrupt {
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

    fn u32(&mut self) -> Result<u32, RetrieveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RetrieveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, RetrieveError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, RetrieveError> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| RetrieveError::Corrupt {
            path: self.path.to_string(),
            message: "string is not valid UTF-8".to_string(),
        })
    }
}

/// Serialize store and index together: magic, version, documents, then
/// the sparse index with little-endian 32-bit float weights.
pub fn store_save(
    store: &DocumentStore,
    index: &TfidfIndex,
    path: &Path,
) -> Result<(), RetrieveError> {
    assert_eq!(index.n_docs, store.len(), "index does not match the store");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    w_u32(&mut out, FORMAT_VERSION);
    w_u64(&mut out, store.len() as u64);
    for d in &store.docs {
        w_str(&mut out, &d.id);
        w_str(&mut out, &d.title);
        w_str(&mut out, &d.text);
        w_u64(&mut out, d.paragraph_starts.len() as u64);
        for &s in &d.paragraph_starts {
            w_u64(&mut out, s as u64);
        }
    }
    w_u64(&mut out, index.bin_df.len() as u64);
    for &(bin, df) in &index.bin_df {
        w_u32(&mut out, bin);
        w_u32(&mut out, df);
    }
    for weights in &index.doc_weights {
        w_u64(&mut out, weights.len() as u64);
        for &(bin, w) in weights {
            w_u32(&mut out, bin);
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    let shown = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|source| RetrieveError::Io {
        path: shown.clone(),
        source,
    })?;
    file.write_all(&out).map_err(|source| RetrieveError::Io {
        path: shown,
        source,
    })
}

pub fn store_load(path: &Path) -> Result<(DocumentStore, TfidfIndex), RetrieveError> {
    let shown = path.display().to_string();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| RetrieveError::Io {
            path: shown.clone(),
            source,
        })?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: &shown,
    };
    if r.take(4)? != MAGIC {
        return Err(RetrieveError::BadMagic { path: shown });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(RetrieveError::BadVersion {
            path: shown,
            found: version,
        });
    }
    let n_docs = r.u64()? as usize;
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let id = r.string()?;
        let title = r.string()?;
        let text = r.string()?;
        let n_starts = r.u64()? as usize;
        let mut paragraph_starts = Vec::with_capacity(n_starts);
        for _ in 0..n_starts {
            paragraph_starts.push(r.u64()? as usize);
        }
        docs.push(Document {
            id,
            title,
            text,
            paragraph_starts,
        });
    }
    let n_bins = r.u64()? as usize;
    let mut bin_df = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        let bin = r.u32()?;
        let df = r.u32()?;
        bin_df.push((bin, df));
    }
    let mut doc_weights = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let n = r.u64()? as usize;
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let bin = r.u32()?;
            let w = r.f32()?;
            weights.push((bin, w));
        }
        doc_weights.push(weights);
    }
    let trailing = buf.len() - r.pos;
    if trailing > 0 {
        return Err(RetrieveError::Corrupt {
            path: shown,
            message: format!("{trailing} trailing bytes"),
        });
    }
    Ok((
        DocumentStore { docs },
        TfidfIndex {
            n_docs,
            bin_df,
            doc_weights,
        },
    ))
}
