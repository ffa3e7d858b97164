//! Neural layer primitives: LSTM/BiLSTM and GRU parameter sets with their
//! scan functions, per-position linear projection ("conv11"), inverted
//! dropout, span cross-entropy, Gaussian initialization, and the Adamax
//! optimizer.
//!
//! Parameter structs own plain tensors. A forward pass binds them onto a
//! fresh graph as leaves (`bind`), pushing every created `Var` into a
//! registry in the same order `for_each` walks the fields — the optimizer
//! and checkpoint code rely on that shared ordering.

mod adamax;
mod ops;
mod scan;

pub use adamax::Adamax;
pub use ops::{conv11, dropout, span_cross_entropy};
pub use scan::{bilstm, bilstm_seq, gru_step, lstm_step};

use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// I.i.d. Gaussian samples with mean 0 and variance 1/fan_in.
pub fn init_gaussian<F: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    assert!(fan_in >= 1, "init_gaussian: fan_in must be at least 1");
    let std = (1.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| F::from_f64(rng::normal(rng) * std))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Walks every parameter tensor with a dotted path name. Implementations
/// must visit fields in a fixed order matching their `bind` method.
pub trait ParamGroup<F: Real> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>));
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

// ── LSTM ────────────────────────────────────────────────────────────────

/// One direction of an LSTM. Gate blocks are ordered input, forget, cell,
/// output along the last axis. `weights` is stored as
/// [input_size + hidden_size, 4 * hidden_size] — transposed relative to
/// the conventional orientation — so a step is a plain right-multiply of
/// the concatenated [x; h] row batch.
#[derive(Clone, Debug)]
pub struct LstmParams<F> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub weights: Tensor<F>,
    pub biases: Tensor<F>,
}

/// Graph handles to one direction's bound parameters.
#[derive(Clone, Copy)]
pub struct LstmVars {
    pub weights: Var,
    pub biases: Var,
}

impl<F: Real> LstmParams<F> {
    /// Gaussian weights with fan_in = input_size + hidden_size; zero
    /// biases except the forget gate, which starts at 1.0 so early cell
    /// states are carried rather than erased.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = input_size + hidden_size;
        let weights = init_gaussian(&[fan_in, 4 * hidden_size], fan_in, rng);
        let mut biases = vec![F::zero(); 4 * hidden_size];
        for b in &mut biases[hidden_size..2 * hidden_size] {
            *b = F::one();
        }
        LstmParams {
            input_size,
            hidden_size,
            weights,
            biases: Tensor::from_vec(biases),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> LstmVars {
        let weights = g.leaf(self.weights.clone(), true);
        let biases = g.leaf(self.biases.clone(), true);
        reg.push(weights);
        reg.push(biases);
        LstmVars { weights, biases }
    }
}

impl<F: Real> ParamGroup<F> for LstmParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "weights"), &self.weights);
        f(&join(prefix, "biases"), &self.biases);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "weights"), &mut self.weights);
        f(&join(prefix, "biases"), &mut self.biases);
    }
}

/// Forward and backward directions of one BiLSTM layer.
#[derive(Clone, Debug)]
pub struct BiLstmParams<F> {
    pub fwd: LstmParams<F>,
    pub bwd: LstmParams<F>,
}

#[derive(Clone, Copy)]
pub struct BiLstmVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

impl<F: Real> BiLstmParams<F> {
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstmParams {
            fwd: LstmParams::init(input_size, hidden_size, rng),
            bwd: LstmParams::init(input_size, hidden_size, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> BiLstmVars {
        BiLstmVars {
            fwd: self.fwd.bind(g, reg),
            bwd: self.bwd.bind(g, reg),
        }
    }
}

impl<F: Real> ParamGroup<F> for BiLstmParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.fwd.for_each(&join(prefix, "fwd"), f);
        self.bwd.for_each(&join(prefix, "bwd"), f);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.fwd.for_each_mut(&join(prefix, "fwd"), f);
        self.bwd.for_each_mut(&join(prefix, "bwd"), f);
    }
}

// ── GRU ─────────────────────────────────────────────────────────────────

/// GRU cell parameters. Each weight maps the concatenated [x; s] row to
/// the state width; the candidate path sees [x; r ⊙ s] instead. The state
/// update is s' = (1 − z) ⊙ s + z ⊙ candidate.
#[derive(Clone, Debug)]
pub struct GruParams<F> {
    pub input_size: usize,
    pub state_size: usize,
    pub w_update: Tensor<F>,
    pub w_reset: Tensor<F>,
    pub w_cand: Tensor<F>,
    pub b_update: Tensor<F>,
    pub b_reset: Tensor<F>,
    pub b_cand: Tensor<F>,
}

#[derive(Clone, Copy)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_cand: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_cand: Var,
}

impl<F: Real> GruParams<F> {
    pub fn init(input_size: usize, state_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = input_size + state_size;
        GruParams {
            input_size,
            state_size,
            w_update: init_gaussian(&[fan_in, state_size], fan_in, rng),
            w_reset: init_gaussian(&[fan_in, state_size], fan_in, rng),
            w_cand: init_gaussian(&[fan_in, state_size], fan_in, rng),
            b_update: Tensor::zeros(&[state_size]),
            b_reset: Tensor::zeros(&[state_size]),
            b_cand: Tensor::zeros(&[state_size]),
        }
    }

    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> GruVars {
        let vars = GruVars {
            w_update: g.leaf(self.w_update.clone(), true),
            w_reset: g.leaf(self.w_reset.clone(), true),
            w_cand: g.leaf(self.w_cand.clone(), true),
            b_update: g.leaf(self.b_update.clone(), true),
            b_reset: g.leaf(self.b_reset.clone(), true),
            b_cand: g.leaf(self.b_cand.clone(), true),
        };
        reg.extend([
            vars.w_update,
            vars.w_reset,
            vars.w_cand,
            vars.b_update,
            vars.b_reset,
            vars.b_cand,
        ]);
        vars
    }
}

impl<F: Real> ParamGroup<F> for GruParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "w_update"), &self.w_update);
        f(&join(prefix, "w_reset"), &self.w_reset);
        f(&join(prefix, "w_cand"), &self.w_cand);
        f(&join(prefix, "b_update"), &self.b_update);
        f(&join(prefix, "b_reset"), &self.b_reset);
        f(&join(prefix, "b_cand"), &self.b_cand);
    }
    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "w_update"), &mut self.w_update);
        f(&join(prefix, "w_reset"), &mut self.w_reset);
        f(&join(prefix, "w_cand"), &mut self.w_cand);
        f(&join(prefix, "b_update"), &mut self.b_update);
        f(&join(prefix, "b_reset"), &mut self.b_reset);
        f(&join(prefix, "b_cand"), &mut self.b_cand);
    }
}
