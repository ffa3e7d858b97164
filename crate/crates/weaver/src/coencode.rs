//! The co-encoder: builds the question/context grid, runs weave blocks of
//! alternating question-wise and context-wise BiLSTM layers with residual
//! connections, and pools the final grid into per-token question and
//! context representations.
//!
//! Grids are [m, n, c] tensors where row i is a question token, column j a
//! context token. Padding is always a suffix: `q_len`/`c_len` give the
//! real extents and everything beyond them is kept at exactly zero through
//! every layer.

use crate::nn::{self, BiLstmParams, BiLstmVars, ParamGroup};
use crate::tensor::{CombineMode, Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Model variant switch. `Full` is the complete architecture; the others
/// each disable one ingredient for comparison runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Grid cells [q; q−c; q·c; extras], weave blocks, conv projections,
    /// memory hops.
    Full,
    /// Grid cells are the plain concatenation [q; c; extras].
    CatQC,
    /// Grid cells [q; c; q·c; extras] (concatenation plus dot product,
    /// without the difference term).
    CatQCDotProduct,
    /// Weave blocks replaced by a per-cell linear projection; no
    /// information flows between grid positions.
    NoRnn,
    /// Pooling reads the last grid directly instead of conv projections.
    NoConv11,
    /// No memory hops: the answer is predicted from the pooled question
    /// mean alone. Co-encoder behavior is unchanged.
    NoMemNet,
}

impl Variant {
    pub fn combine_mode(&self) -> CombineMode {
        match self {
            Variant::CatQC => CombineMode::QC,
            Variant::CatQCDotProduct => CombineMode::QCDot,
            _ => CombineMode::QDiffDot,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoencoderConfig {
    /// Number of weave blocks k (two BiLSTM layers each).
    pub blocks: usize,
    /// Hidden size h of every LSTM direction; grid layers have width 2h.
    pub hidden: usize,
    /// Width d of the combined input grid cells.
    pub input_width: usize,
    pub variant: Variant,
    /// Dropout on the input grid (training only).
    pub grid_dropout: f64,
    /// Dropout on each BiLSTM layer output, applied before the residual.
    pub lstm_dropout: f64,
}

impl CoencoderConfig {
    pub fn validate(&self) {
        assert!(self.blocks >= 1, "coencoder: blocks must be >= 1");
        assert!(self.hidden >= 1, "coencoder: hidden must be >= 1");
    }
}

/// A grid on the graph plus its real (unpadded) extents.
#[derive(Clone, Copy)]
pub struct GridVar {
    pub values: Var,
    pub q_len: usize,
    pub c_len: usize,
}

// ── parameters ──────────────────────────────────────────────────────────

/// One weave block: a question-wise BiLSTM shared across all columns and
/// a context-wise BiLSTM shared across all rows.
#[derive(Clone, Debug)]
pub struct WeaveBlockParams<F> {
    pub question: BiLstmParams<F>,
    pub context: BiLstmParams<F>,
}

#[derive(Clone, Debug)]
pub enum BlockParams<F> {
    Weave(WeaveBlockParams<F>),
    /// Per-cell projection matrix [c, 2h] replacing the whole block.
    Linear(Tensor<F>),
}

#[derive(Clone, Copy)]
pub struct WeaveBlockVars {
    pub question: BiLstmVars,
    pub context: BiLstmVars,
}

#[derive(Clone, Copy)]
pub enum BlockVars {
    Weave(WeaveBlockVars),
    Linear(Var),
}

#[derive(Clone, Debug)]
pub struct CoencoderParams<F> {
    pub blocks: Vec<BlockParams<F>>,
    /// Conv11 projection pooled along the context axis into Q^h.
    pub question_conv: Option<Tensor<F>>,
    /// Conv11 projection pooled along the question axis into C^h.
    pub context_conv: Option<Tensor<F>>,
}

pub struct CoencoderVars {
    pub blocks: Vec<BlockVars>,
    pub question_conv: Option<Var>,
    pub context_conv: Option<Var>,
}

impl<F: Real> CoencoderParams<F> {
    pub fn init(cfg: &CoencoderConfig, rng: &mut ChaCha8Rng) -> Self {
        cfg.validate();
        let two_h = 2 * cfg.hidden;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut width = cfg.input_width;
        for _ in 0..cfg.blocks {
            let block = match cfg.variant {
                Variant::NoRnn => {
                    BlockParams::Linear(nn::init_gaussian(&[width, two_h], width, rng))
                }
                _ => BlockParams::Weave(WeaveBlockParams {
                    question: BiLstmParams::init(width, cfg.hidden, rng),
                    context: BiLstmParams::init(two_h, cfg.hidden, rng),
                }),
            };
            blocks.push(block);
            width = two_h;
        }
        let (question_conv, context_conv) = if cfg.variant == Variant::NoConv11 {
            (None, None)
        } else {
            (
                Some(nn::init_gaussian(&[two_h, two_h], two_h, rng)),
                Some(nn::init_gaussian(&[two_h, two_h], two_h, rng)),
            )
        };
        CoencoderParams {
            blocks,
            question_conv,
            context_conv,
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> CoencoderVars {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockParams::Weave(w) => BlockVars::Weave(WeaveBlockVars {
                    question: w.question.bind(g, reg),
                    context: w.context.bind(g, reg),
                }),
                BlockParams::Linear(t) => {
                    let v = g.leaf(t.clone(), true);
                    reg.push(v);
                    BlockVars::Linear(v)
                }
            })
            .collect();
        let mut bind_conv = |t: &Option<Tensor<F>>| {
            t.as_ref().map(|t| {
                let v = g.leaf(t.clone(), true);
                reg.push(v);
                v
            })
        };
        let question_conv = bind_conv(&self.question_conv);
        let context_conv = bind_conv(&self.context_conv);
        CoencoderVars {
            blocks,
            question_conv,
            context_conv,
        }
    }
}

impl<F: Real> ParamGroup<F> for CoencoderParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                BlockParams::Weave(w) => {
                    w.question.for_each(&format!("{prefix}.block{i}.question"), f);
                    w.context.for_each(&format!("{prefix}.block{i}.context"), f);
                }
                BlockParams::Linear(t) => f(&format!("{prefix}.block{i}.projection"), t),
            }
        }
        if let Some(t) = &self.question_conv {
            f(&format!("{prefix}.question_conv"), t);
        }
        if let Some(t) = &self.context_conv {
            f(&format!("{prefix}.context_conv"), t);
        }
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            match b {
                BlockParams::Weave(w) => {
                    w.question
                        .for_each_mut(&format!("{prefix}.block{i}.question"), f);
                    w.context
                        .for_each_mut(&format!("{prefix}.block{i}.context"), f);
                }
                BlockParams::Linear(t) => f(&format!("{prefix}.block{i}.projection"), t),
            }
        }
        if let Some(t) = &mut self.question_conv {
            f(&format!("{prefix}.question_conv"), t);
        }
        if let Some(t) = &mut self.context_conv {
            f(&format!("{prefix}.context_conv"), t);
        }
    }
}

// ── operations ──────────────────────────────────────────────────────────

/// Pairwise feature combination for a single grid cell. No trainable
/// parameters; the grid builder applies the same rule at every cell.
pub fn combine_features<F: Real>(q: &[F], c: &[F], extra: &[F], mode: CombineMode) -> Vec<F> {
    assert_eq!(
        q.len(),
        c.len(),
        "combine_features: embedding widths differ: {} vs {}",
        q.len(),
        c.len()
    );
    let mut out = Vec::with_capacity(mode.width(q.len(), extra.len()));
    out.extend_from_slice(q);
    match mode {
        CombineMode::QDiffDot => {
            out.extend(q.iter().zip(c).map(|(&a, &b)| a - b));
            out.push(dot(q, c));
        }
        CombineMode::QC => out.extend_from_slice(c),
        CombineMode::QCDot => {
            out.extend_from_slice(c);
            out.push(dot(q, c));
        }
    }
    out.extend_from_slice(extra);
    out
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Build the input grid from question embeddings [m, e], context
/// embeddings [n, e] and per-context-token extra features [n, x].
/// Applies grid dropout in training mode.
#[allow(clippy::too_many_arguments)]
pub fn build_grid<F: Real>(
    g: &mut Graph<F>,
    question: Var,
    context: Var,
    extras: Var,
    q_len: usize,
    c_len: usize,
    cfg: &CoencoderConfig,
    mut train: Option<&mut ChaCha8Rng>,
) -> GridVar {
    assert!(q_len >= 1, "build_grid: empty question");
    assert!(c_len >= 1, "build_grid: empty context");
    let mode = cfg.variant.combine_mode();
    let mut values = g.combine_grid(question, context, extras, mode, q_len, c_len);
    if let Some(rng) = train.as_deref_mut() {
        values = nn::dropout(g, values, cfg.grid_dropout, true, rng);
        // dropout can re-scale pad cells of the mask constant; they are
        // multiplied with zeros, so the grid stays clean — no re-mask needed
    }
    GridVar {
        values,
        q_len,
        c_len,
    }
}

/// Scan axis of one weave layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanAxis {
    /// Sequences run along the question axis; one sequence per context
    /// column.
    Question,
    /// Sequences run along the context axis; one sequence per question
    /// row.
    Context,
}

/// One directional BiLSTM layer over the grid: every slice along the other
/// axis is scanned as a sequence with shared weights, outputs reassembled
/// to [m, n, 2h] with padding re-zeroed.
pub fn weave_layer<F: Real>(
    g: &mut Graph<F>,
    grid: GridVar,
    axis: ScanAxis,
    params: &BiLstmVars,
    hidden: usize,
) -> GridVar {
    let out = match axis {
        ScanAxis::Question => {
            // [m, n, c] is already (length, batch, features)
            nn::bilstm_seq(g, grid.values, grid.q_len, &params.fwd, &params.bwd, hidden)
        }
        ScanAxis::Context => {
            let turned = g.transpose01(grid.values);
            let scanned = nn::bilstm_seq(g, turned, grid.c_len, &params.fwd, &params.bwd, hidden);
            g.transpose01(scanned)
        }
    };
    // the scan zeroes pad positions along its own axis; pad slices along
    // the batch axis still see LSTM biases and need masking out
    let values = g.mask_grid(out, grid.q_len, grid.c_len);
    GridVar { values, ..grid }
}

/// One full weave block without residuals: question-wise scan then
/// context-wise scan. `coencode` inserts the residual connections.
pub fn weave_block<F: Real>(
    g: &mut Graph<F>,
    grid: GridVar,
    params: &WeaveBlockVars,
    hidden: usize,
) -> GridVar {
    let mid = weave_layer(g, grid, ScanAxis::Question, &params.question, hidden);
    weave_layer(g, mid, ScanAxis::Context, &params.context, hidden)
}

/// Run all blocks over the input grid. Every layer after the first adds
/// its input to its (dropout-applied) output before feeding the next
/// layer; the first layer changes width d → 2h and has no residual.
pub fn coencode<F: Real>(
    g: &mut Graph<F>,
    grid: GridVar,
    vars: &CoencoderVars,
    cfg: &CoencoderConfig,
    mut train: Option<&mut ChaCha8Rng>,
) -> GridVar {
    let mut current = grid;
    let mut layer_index = 0usize;
    for block in &vars.blocks {
        match block {
            BlockVars::Weave(w) => {
                for (axis, params) in [
                    (ScanAxis::Question, &w.question),
                    (ScanAxis::Context, &w.context),
                ] {
                    let mut out = weave_layer(g, current, axis, params, cfg.hidden);
                    if let Some(rng) = train.as_deref_mut() {
                        let dropped = nn::dropout(g, out.values, cfg.lstm_dropout, true, rng);
                        // the dropout mask touches pad cells too; re-zero
                        let masked = g.mask_grid(dropped, out.q_len, out.c_len);
                        out.values = masked;
                    }
                    if layer_index > 0 {
                        out.values = g.add(out.values, current.values);
                    }
                    current = out;
                    layer_index += 1;
                }
            }
            BlockVars::Linear(w) => {
                let projected = nn::conv11(g, current.values, *w);
                let mut out = GridVar {
                    values: projected,
                    ..current
                };
                if layer_index > 0 {
                    out.values = g.add(out.values, current.values);
                }
                current = out;
                layer_index += 1;
            }
        }
    }
    current
}

/// Project the final grid with the two conv11 maps and max-pool each over
/// the opposite axis: Q^h[i] pools over unmasked context positions,
/// C^h[j] over unmasked question positions. Padded positions never win
/// the max. Without conv weights, pooling reads the grid directly.
pub fn pool_representations<F: Real>(
    g: &mut Graph<F>,
    grid: GridVar,
    vars: &CoencoderVars,
) -> (Var, Var) {
    let shape = g.value(grid.values).shape().to_vec();
    let (m, n) = (shape[0], shape[1]);
    let u = match vars.question_conv {
        Some(w) => nn::conv11(g, grid.values, w),
        None => grid.values,
    };
    let v = match vars.context_conv {
        Some(w) => nn::conv11(g, grid.values, w),
        None => grid.values,
    };
    let context_mask: Vec<bool> = (0..n).map(|j| j < grid.c_len).collect();
    let question_mask: Vec<bool> = (0..m).map(|i| i < grid.q_len).collect();
    let question_repr = g.reduce_max_axis(u, 1, Some(&context_mask));
    let context_repr = g.reduce_max_axis(v, 0, Some(&question_mask));
    (question_repr, context_repr)
}
