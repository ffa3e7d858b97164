//! Data plumbing: tokenization, per-token features, dataset ingestion
//! (SQuAD-format JSON, bAbI stories, distant supervision), embedding
//! tables, length-bucketed batching, and synthetic task generation.

pub mod babi;
pub mod batch;
pub mod distant;
pub mod embed;
pub mod features;
pub mod squad;
pub mod synth;
pub mod tokenize;

pub use babi::{load_babi, BabiDataset};
pub use batch::{make_batches, Batch};
pub use distant::{distant_supervision_label, DistantReport};
pub use embed::{EmbeddingTable, OOV_ID, PAD_ID, RESERVED_ROWS};
pub use features::{extract_features, feature_width, load_sidecar, SidecarTags, TagInventory};
pub use squad::{load_squad_documents, load_squad_json};
pub use synth::{synth_task_generate, SynthKind};
pub use tokenize::tokenize;

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path} [{record}]: {message}")]
    BadRecord {
        path: String,
        record: String,
        message: String,
    },
}

/// A single token with byte offsets into its source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub lower: String,
    /// Byte offset of the first char in the source.
    pub start: usize,
    /// Byte offset one past the last char.
    pub end: usize,
}

/// A gold answer span, in token indices (inclusive end).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldSpan {
    pub paragraph: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// One paragraph of an example: source text, its tokens, and the
/// per-token extra feature matrix [n, feature_width].
#[derive(Clone, Debug)]
pub struct ExampleParagraph {
    pub text: String,
    pub tokens: Vec<Token>,
    pub features: Tensor<f32>,
}

/// One question with its paragraphs and gold answers. The first gold is
/// the training target; all golds participate in evaluation.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub question: Vec<Token>,
    pub paragraphs: Vec<ExampleParagraph>,
    pub golds: Vec<GoldSpan>,
    /// Optional candidate answer strings restricting decodable spans.
    pub candidates: Option<Vec<String>>,
}

impl Example {
    /// The gold used as the training target.
    pub fn training_gold(&self) -> &GoldSpan {
        &self.golds[0]
    }

    /// Source string covered by a token span of one paragraph.
    pub fn span_text(&self, paragraph: usize, start: usize, end: usize) -> &str {
        let p = &self.paragraphs[paragraph];
        &p.text[p.tokens[start].start..p.tokens[end].end]
    }

    /// Panics if any gold span is out of bounds or reversed.
    pub fn validate(&self) {
        assert!(!self.question.is_empty(), "example {}: empty question", self.id);
        assert!(!self.golds.is_empty(), "example {}: no gold answers", self.id);
        for g in &self.golds {
            assert!(
                g.paragraph < self.paragraphs.len(),
                "example {}: gold paragraph {} out of bounds",
                self.id,
                g.paragraph
            );
            let n = self.paragraphs[g.paragraph].tokens.len();
            assert!(
                g.start <= g.end && g.end < n,
                "example {}: gold span {}..{} out of bounds for {} tokens",
                self.id,
                g.start,
                g.end,
                n
            );
        }
    }
}
