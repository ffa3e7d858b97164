//! Retrieve-and-read: answer open questions against an indexed corpus.
//!
//! Each question is matched to its top-k documents by the TF-IDF
//! retriever; the reader then scores every paragraph of every retrieved
//! document and the single best span across all of them becomes the
//! answer. Span scores stay in raw log space end to end, so they are
//! comparable across paragraphs and documents and the winner needs no
//! per-document renormalization.

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data::{extract_features, tokenize, EmbeddingTable, Token};
use crate::eval::{evaluate_dataset, EvalError, EvalMode, EvalResult};
use crate::model::{forward_paragraph, ModelConfig, ModelParams, ParagraphInput};
use crate::reader::{cross_paragraph_decode, ParagraphScores};
use crate::retriever::{retrieve_topk, DocumentStore, Retrieved, RetrieveError, TfidfIndex};
use crate::tensor::Graph;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("questions file {path} line {line}: {message}")]
    BadQuestion {
        path: String,
        line: usize,
        message: String,
    },
    #[error("the document index is empty; build it over a non-empty corpus")]
    EmptyIndex,
    #[error("documents retrieved for question {id} contain no readable text")]
    NoText { id: String },
    #[error("scoring needs at least one question with gold answers")]
    NoGolds,
}

// ── questions file ───────────────────────────────────────────────────────

/// One open question, optionally labeled with acceptable answers.
#[derive(Clone, Debug, Deserialize)]
pub struct PipelineQuestion {
    pub id: String,
    pub question: String,
    /// Gold answers (or patterns, under the regex eval modes). Empty
    /// means unlabeled: the question is answered but never scored.
    #[serde(default)]
    pub answers: Vec<String>,
}

/// Parse a questions file: one JSON record per line with fields `id`,
/// `question` and optional `answers`. Blank lines are skipped.
pub fn load_questions(path: &Path) -> Result<Vec<PipelineQuestion>, PipelineError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out: Vec<PipelineQuestion> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| PipelineError::BadQuestion {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let q: PipelineQuestion =
            serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if q.question.trim().is_empty() {
            return Err(bad(format!("question {} is empty", q.id)));
        }
        if !seen.insert(q.id.clone()) {
            return Err(bad(format!("duplicate question id {}", q.id)));
        }
        out.push(q);
    }
    Ok(out)
}

// ── answering ────────────────────────────────────────────────────────────

/// The pipeline's verdict on one question.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineAnswer {
    pub id: String,
    pub answer: String,
    /// Id of the document the span came from.
    pub doc_id: String,
    /// Paragraph index within that document.
    pub paragraph: usize,
    /// Inclusive token span within the paragraph.
    pub start: usize,
    pub end: usize,
    /// Raw log-space span score, comparable across documents.
    pub log_score: f64,
}

/// One scored paragraph of one retrieved document.
struct ReadParagraph {
    /// Rank of the source document in the retrieval list.
    rank: usize,
    /// Index of the source document in the store.
    doc: usize,
    /// Paragraph index within the document.
    paragraph: usize,
    text: String,
    tokens: Vec<Token>,
    scores: ParagraphScores,
}

/// Run the reader over every paragraph of every retrieved document.
/// Paragraphs that tokenize to nothing are skipped.
fn read_documents(
    cfg: &ModelConfig,
    params: &ModelParams<f32>,
    table: &EmbeddingTable,
    store: &DocumentStore,
    hits: &[Retrieved],
    question: &[Token],
) -> Vec<ReadParagraph> {
    let q_ids = table.ids(question);
    let mut g: Graph<f32> = Graph::new();
    let mut reg = Vec::new();
    let vars = params.bind(&mut g, &mut reg);
    let mut out = Vec::new();
    for (rank, hit) in hits.iter().enumerate() {
        let doc = store.get(hit.doc);
        for (pi, text) in doc.paragraphs().into_iter().enumerate() {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                continue;
            }
            let ids = table.ids(&tokens);
            let features = extract_features(question, &tokens, None);
            let fwd = forward_paragraph(
                &mut g,
                &vars,
                cfg,
                &q_ids,
                question.len(),
                &ParagraphInput {
                    context_ids: &ids,
                    c_len: ids.len(),
                    features: &features,
                },
                None,
            );
            out.push(ReadParagraph {
                rank,
                doc: hit.doc,
                paragraph: pi,
                text: text.to_string(),
                scores: ParagraphScores {
                    start_logits: g.value(fwd.start).map_to_f64(),
                    end_logits: g.value(fwd.end).map_to_f64(),
                    mask: vec![true; fwd.c_len],
                    candidates: None,
                },
                tokens,
            });
        }
    }
    out
}

/// Pick the best span among the paragraphs whose document ranks in the
/// top `k`, and package it as an answer.
fn decode_rank_prefix(
    id: &str,
    paras: &[ReadParagraph],
    store: &DocumentStore,
    k: usize,
    max_span_len: usize,
) -> Result<PipelineAnswer, PipelineError> {
    let visible: Vec<&ReadParagraph> = paras.iter().filter(|p| p.rank < k).collect();
    if visible.is_empty() {
        return Err(PipelineError::NoText { id: id.to_string() });
    }
    let scores: Vec<ParagraphScores> = visible.iter().map(|p| p.scores.clone()).collect();
    let span = cross_paragraph_decode(&scores, max_span_len)
        .map_err(|_| PipelineError::NoText { id: id.to_string() })?;
    let para = visible[span.paragraph_id];
    let toks = &para.tokens;
    Ok(PipelineAnswer {
        id: id.to_string(),
        answer: para.text[toks[span.start].start..toks[span.end].end].to_string(),
        doc_id: store.get(para.doc).id.clone(),
        paragraph: para.paragraph,
        start: span.start,
        end: span.end,
        log_score: span.log_score,
    })
}

/// Answer every question against the corpus: retrieve the top `k`
/// documents per question, read all their paragraphs, and return the
/// best span across everything read.
pub fn run_pipeline(
    ckpt: &Checkpoint,
    store: &DocumentStore,
    index: &TfidfIndex,
    questions: &[PipelineQuestion],
    k: usize,
) -> Result<Vec<PipelineAnswer>, PipelineError> {
    assert!(k >= 1, "run_pipeline: k must be >= 1");
    if store.is_empty() || index.n_docs() == 0 {
        return Err(PipelineError::EmptyIndex);
    }
    let cfg = ckpt.meta.model_config();
    let table = ckpt.embedding_table();
    let mut out = Vec::with_capacity(questions.len());
    for q in questions {
        let hits = retrieve_topk(index, store, &q.question, k);
        let q_toks = tokenize(&q.question);
        let paras = read_documents(&cfg, &ckpt.params, &table, store, &hits, &q_toks);
        out.push(decode_rank_prefix(&q.id, &paras, store, k, cfg.max_span_len)?);
    }
    Ok(out)
}

/// Answer one question against one supplied context (no retrieval). The
/// context may hold several blank-line-separated paragraphs; the best
/// span across them wins.
pub fn answer_in_context(
    ckpt: &Checkpoint,
    question: &str,
    context: &str,
) -> Result<PipelineAnswer, PipelineError> {
    let store = DocumentStore::from_documents(vec![(
        "context".to_string(),
        String::new(),
        context.to_string(),
    )]);
    let hits = vec![Retrieved {
        doc: 0,
        id: "context".to_string(),
        score: 0.0,
    }];
    let cfg = ckpt.meta.model_config();
    let table = ckpt.embedding_table();
    let q_toks = tokenize(question);
    let paras = read_documents(&cfg, &ckpt.params, &table, &store, &hits, &q_toks);
    decode_rank_prefix("question", &paras, &store, 1, cfg.max_span_len)
}

/// Score pipeline answers against the questions that carry golds.
/// Returns `None` when no question is labeled.
pub fn score_answers(
    answers: &[PipelineAnswer],
    questions: &[PipelineQuestion],
    mode: EvalMode,
) -> Result<Option<EvalResult>, PipelineError> {
    let golds: Vec<(String, Vec<String>)> = questions
        .iter()
        .filter(|q| !q.answers.is_empty())
        .map(|q| (q.id.clone(), q.answers.clone()))
        .collect();
    if golds.is_empty() {
        return Ok(None);
    }
    let labeled: HashSet<&str> = golds.iter().map(|(id, _)| id.as_str()).collect();
    let predictions: Vec<(String, String)> = answers
        .iter()
        .filter(|a| labeled.contains(a.id.as_str()))
        .map(|a| (a.id.clone(), a.answer.clone()))
        .collect();
    Ok(Some(evaluate_dataset(&predictions, &golds, mode)?))
}

// ── k sweep ──────────────────────────────────────────────────────────────

/// One row of the k-vs-score table.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub em: f64,
    pub f1: f64,
    pub count: usize,
}

/// Evaluate the pipeline at several retrieval depths. Documents are
/// retrieved and read once at the deepest `k`; shallower rows reuse the
/// scored paragraphs, decoding over the rank prefix only — valid because
/// a top-k list is a prefix of any deeper top-k' list.
pub fn k_sweep(
    ckpt: &Checkpoint,
    store: &DocumentStore,
    index: &TfidfIndex,
    questions: &[PipelineQuestion],
    ks: &[usize],
    mode: EvalMode,
) -> Result<Vec<SweepRow>, PipelineError> {
    assert!(!ks.is_empty(), "k_sweep: no k values");
    assert!(ks.iter().all(|&k| k >= 1), "k_sweep: k must be >= 1");
    if store.is_empty() || index.n_docs() == 0 {
        return Err(PipelineError::EmptyIndex);
    }
    if !questions.iter().any(|q| !q.answers.is_empty()) {
        return Err(PipelineError::NoGolds);
    }
    let max_k = *ks.iter().max().unwrap();
    let cfg = ckpt.meta.model_config();
    let table = ckpt.embedding_table();
    let read: Vec<Vec<ReadParagraph>> = questions
        .iter()
        .map(|q| {
            let hits = retrieve_topk(index, store, &q.question, max_k);
            let q_toks = tokenize(&q.question);
            read_documents(&cfg, &ckpt.params, &table, store, &hits, &q_toks)
        })
        .collect();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut answers = Vec::with_capacity(questions.len());
        for (q, paras) in questions.iter().zip(&read) {
            answers.push(decode_rank_prefix(&q.id, paras, store, k, cfg.max_span_len)?);
        }
        let result = score_answers(&answers, questions, mode)?.expect("golds checked above");
        rows.push(SweepRow {
            k,
            em: result.em,
            f1: result.f1,
            count: result.count,
        });
    }
    Ok(rows)
}

/// Markdown table of a k sweep.
pub fn sweep_table_markdown(rows: &[SweepRow]) -> String {
    let mut out = String::from("| k | EM | F1 | questions |\n|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!("| {} | {:.1} | {:.1} | {} |\n", r.k, r.em, r.f1, r.count));
    }
    out
}

/// TSV table of a k sweep.
pub fn sweep_table_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k\tem\tf1\tcount\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", r.k, r.em, r.f1, r.count));
    }
    out
}
