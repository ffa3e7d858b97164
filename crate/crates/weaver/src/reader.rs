//! The reader: multi-hop memory state over the pooled context
//! representation, bilinear start/end scoring, span decoding with a length
//! cap, and the single- and multi-paragraph training losses.
//!
//! Span scores are kept in the log domain: the score of span (i, j) is
//! z_start[i] + z_end[j], which has the same argmax as the product of
//! unnormalized exponentials and stays finite. Because the scores are
//! never normalized per paragraph, they are directly comparable across
//! paragraphs and documents.

use crate::nn::{self, GruParams, GruVars, ParamGroup};
use crate::tensor::{Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReaderConfig {
    /// Memory hops T. 0 bypasses the memory network entirely.
    pub hops: usize,
    /// Inclusive span length cap: decoded spans satisfy j − i ≤ max_span_len.
    pub max_span_len: usize,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig {
            hops: 3,
            max_span_len: 15,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("no valid answer span (all positions masked or no candidate eligible)")]
    NoValidSpan,
}

/// A decoded answer span. `log_score` is z_start[start] + z_end[end].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanPrediction {
    pub paragraph_id: usize,
    pub start: usize,
    pub end: usize,
    pub log_score: f64,
}

// ── parameters ──────────────────────────────────────────────────────────

/// All reader weights. Projections are square maps on the pooled width
/// (2h): `attn_proj` scores context rows against the state, `read_proj`
/// shapes what the attention mixture reads, and `start_proj`/`end_proj`
/// are the bilinear answer maps.
#[derive(Clone, Debug)]
pub struct ReaderParams<F> {
    pub attn_proj: Tensor<F>,
    pub read_proj: Tensor<F>,
    pub gru: GruParams<F>,
    pub start_proj: Tensor<F>,
    pub end_proj: Tensor<F>,
}

#[derive(Clone, Copy)]
pub struct ReaderVars {
    pub attn_proj: Var,
    pub read_proj: Var,
    pub gru: GruVars,
    pub start_proj: Var,
    pub end_proj: Var,
}

impl<F: Real> ReaderParams<F> {
    /// `state` is the pooled representation width (2h).
    pub fn init(state: usize, rng: &mut ChaCha8Rng) -> Self {
        ReaderParams {
            attn_proj: nn::init_gaussian(&[state, state], state, rng),
            read_proj: nn::init_gaussian(&[state, state], state, rng),
            gru: GruParams::init(state, state, rng),
            start_proj: nn::init_gaussian(&[state, state], state, rng),
            end_proj: nn::init_gaussian(&[state, state], state, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> ReaderVars {
        let attn_proj = g.leaf(self.attn_proj.clone(), true);
        let read_proj = g.leaf(self.read_proj.clone(), true);
        reg.push(attn_proj);
        reg.push(read_proj);
        let gru = self.gru.bind(g, reg);
        let start_proj = g.leaf(self.start_proj.clone(), true);
        let end_proj = g.leaf(self.end_proj.clone(), true);
        reg.push(start_proj);
        reg.push(end_proj);
        ReaderVars {
            attn_proj,
            read_proj,
            gru,
            start_proj,
            end_proj,
        }
    }
}

impl<F: Real> ParamGroup<F> for ReaderParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&format!("{prefix}.attn_proj"), &self.attn_proj);
        f(&format!("{prefix}.read_proj"), &self.read_proj);
        self.gru.for_each(&format!("{prefix}.gru"), f);
        f(&format!("{prefix}.start_proj"), &self.start_proj);
        f(&format!("{prefix}.end_proj"), &self.end_proj);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&format!("{prefix}.attn_proj"), &mut self.attn_proj);
        f(&format!("{prefix}.read_proj"), &mut self.read_proj);
        self.gru.for_each_mut(&format!("{prefix}.gru"), f);
        f(&format!("{prefix}.start_proj"), &mut self.start_proj);
        f(&format!("{prefix}.end_proj"), &mut self.end_proj);
    }
}

// ── state and hops ──────────────────────────────────────────────────────

/// Initial state: mean of the unmasked question representation rows.
pub fn init_state<F: Real>(g: &mut Graph<F>, question_repr: Var, q_len: usize) -> Var {
    let m = g.value(question_repr).shape()[0];
    assert!(q_len >= 1, "init_state: empty question");
    let mask: Vec<bool> = (0..m).map(|i| i < q_len).collect();
    g.reduce_mean_axis(question_repr, 0, Some(&mask))
}

/// Attention read for one hop: softmax-weighted mixture of projected
/// context rows. Returns (attention weights [n], read vector [2h]).
pub fn hop_attend<F: Real>(
    g: &mut Graph<F>,
    state: Var,
    context_repr: Var,
    c_len: usize,
    vars: &ReaderVars,
) -> (Var, Var) {
    let shape = g.value(context_repr).shape().to_vec();
    let (n, width) = (shape[0], shape[1]);
    assert!(c_len >= 1 && c_len <= n, "hop: context length {c_len} out of range");
    let projected = g.matmul(context_repr, vars.attn_proj);
    let state_col = g.reshape(state, &[width, 1]);
    let scores = g.matmul(projected, state_col);
    let scores = g.reshape(scores, &[n]);
    let mask: Vec<bool> = (0..n).map(|j| j < c_len).collect();
    let attention = g.masked_softmax(scores, &mask);
    let readable = g.matmul(context_repr, vars.read_proj);
    let attn_row = g.reshape(attention, &[1, n]);
    let mixed = g.matmul(attn_row, readable);
    let read = g.reshape(mixed, &[width]);
    (attention, read)
}

/// One memory hop: attention read followed by a GRU state update.
pub fn hop<F: Real>(
    g: &mut Graph<F>,
    state: Var,
    context_repr: Var,
    c_len: usize,
    vars: &ReaderVars,
) -> Var {
    let width = g.value(state).shape()[0];
    let (_, read) = hop_attend(g, state, context_repr, c_len, vars);
    let read_row = g.reshape(read, &[1, width]);
    let state_row = g.reshape(state, &[1, width]);
    let next = nn::gru_step(g, read_row, state_row, &vars.gru);
    g.reshape(next, &[width])
}

/// Run `hops` memory hops from the initial state. Zero hops returns the
/// initial state unchanged.
pub fn run_hops<F: Real>(
    g: &mut Graph<F>,
    state: Var,
    context_repr: Var,
    c_len: usize,
    vars: &ReaderVars,
    hops: usize,
) -> Var {
    let mut s = state;
    for _ in 0..hops {
        s = hop(g, s, context_repr, c_len, vars);
    }
    s
}

/// Bilinear start/end scores: z_start[j] = c_j · (start_proj · s_T), and
/// likewise for the end map. Returns two [n] vectors of raw logits.
pub fn answer_logits<F: Real>(
    g: &mut Graph<F>,
    context_repr: Var,
    state: Var,
    vars: &ReaderVars,
) -> (Var, Var) {
    let shape = g.value(context_repr).shape().to_vec();
    let (n, width) = (shape[0], shape[1]);
    let state_col = g.reshape(state, &[width, 1]);
    let mut bilinear = |proj: Var| {
        let projected = g.matmul(context_repr, proj);
        let scores = g.matmul(projected, state_col);
        g.reshape(scores, &[n])
    };
    let start = bilinear(vars.start_proj);
    let end = bilinear(vars.end_proj);
    (start, end)
}

// ── decoding ────────────────────────────────────────────────────────────

/// Pick the best span: maximize z_start[i] + z_end[j] over unmasked
/// i ≤ j ≤ i + max_len. Ties break to the smallest i, then smallest j.
/// With a candidate set, only listed (i, j) positions are eligible.
pub fn decode_span(
    start_logits: &[f64],
    end_logits: &[f64],
    mask: &[bool],
    max_len: usize,
    candidates: Option<&[(usize, usize)]>,
) -> Result<SpanPrediction, DecodeError> {
    let n = start_logits.len();
    assert_eq!(
        end_logits.len(),
        n,
        "decode_span: {} start logits vs {} end logits",
        n,
        end_logits.len()
    );
    assert_eq!(mask.len(), n, "decode_span: mask length {} vs {} positions", mask.len(), n);
    let eligible = |i: usize, j: usize| match candidates {
        Some(set) => set.contains(&(i, j)),
        None => true,
    };
    let mut best: Option<SpanPrediction> = None;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        for j in i..n.min(i + max_len + 1) {
            if !mask[j] || !eligible(i, j) {
                continue;
            }
            let score = start_logits[i] + end_logits[j];
            // strict comparison keeps the earliest (i, j) on ties
            if best.map_or(true, |b| score > b.log_score) {
                best = Some(SpanPrediction {
                    paragraph_id: 0,
                    start: i,
                    end: j,
                    log_score: score,
                });
            }
        }
    }
    best.ok_or(DecodeError::NoValidSpan)
}

/// Raw per-paragraph scores handed to the cross-paragraph decoder.
#[derive(Clone, Debug)]
pub struct ParagraphScores {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub mask: Vec<bool>,
    pub candidates: Option<Vec<(usize, usize)>>,
}

/// Decode every paragraph on its raw logits and return the globally best
/// span. No per-paragraph normalization happens, so scores are directly
/// comparable. Tie order: score, then start, then end, then paragraph id.
pub fn cross_paragraph_decode(
    paragraphs: &[ParagraphScores],
    max_len: usize,
) -> Result<SpanPrediction, DecodeError> {
    assert!(!paragraphs.is_empty(), "cross_paragraph_decode: no paragraphs");
    let mut best: Option<SpanPrediction> = None;
    for (id, p) in paragraphs.iter().enumerate() {
        let local = match decode_span(
            &p.start_logits,
            &p.end_logits,
            &p.mask,
            max_len,
            p.candidates.as_deref(),
        ) {
            Ok(mut span) => {
                span.paragraph_id = id;
                span
            }
            Err(DecodeError::NoValidSpan) => continue,
        };
        let wins = match &best {
            None => true,
            Some(b) => {
                local.log_score > b.log_score
                    || (local.log_score == b.log_score && (local.start, local.end) < (b.start, b.end))
            }
        };
        if wins {
            best = Some(local);
        }
    }
    best.ok_or(DecodeError::NoValidSpan)
}

// ── training losses ─────────────────────────────────────────────────────

/// Logits of one paragraph inside a multi-paragraph loss.
#[derive(Clone, Copy)]
pub struct ParagraphLogits {
    pub start: Var,
    pub end: Var,
    /// Real (unmasked) prefix length of this paragraph.
    pub len: usize,
}

/// Softmax over the concatenation of every paragraph's positions, with
/// cross-entropy against the gold span inside the gold paragraph. With a
/// single paragraph this is exactly the span cross-entropy.
pub fn multi_paragraph_loss<F: Real>(
    g: &mut Graph<F>,
    paragraphs: &[ParagraphLogits],
    gold_paragraph: usize,
    gold_span: (usize, usize),
) -> Var {
    assert!(
        gold_paragraph < paragraphs.len(),
        "multi_paragraph_loss: gold paragraph {gold_paragraph} missing from {} paragraphs",
        paragraphs.len()
    );
    let mut mask = Vec::new();
    let mut offset = 0usize;
    let mut gold_offset = None;
    for (idx, p) in paragraphs.iter().enumerate() {
        let n = g.value(p.start).numel();
        assert!(
            p.len >= 1 && p.len <= n,
            "multi_paragraph_loss: paragraph {idx} length {} out of range for {n} positions",
            p.len
        );
        mask.extend((0..n).map(|j| j < p.len));
        if idx == gold_paragraph {
            assert!(
                gold_span.1 < p.len,
                "multi_paragraph_loss: gold span {gold_span:?} outside gold paragraph of length {}",
                p.len
            );
            gold_offset = Some(offset);
        }
        offset += n;
    }
    let starts: Vec<Var> = paragraphs.iter().map(|p| p.start).collect();
    let ends: Vec<Var> = paragraphs.iter().map(|p| p.end).collect();
    let all_start = g.concat_last(&starts);
    let all_end = g.concat_last(&ends);
    let base = gold_offset.unwrap();
    nn::span_cross_entropy(
        g,
        all_start,
        all_end,
        &mask,
        (base + gold_span.0, base + gold_span.1),
    )
}
