//! The full model: embedding lookup, grid co-encoder, and memory reader
//! composed behind one parameter struct and one forward function.
//!
//! Each paragraph runs a complete co-encoding against the question, so a
//! multi-paragraph example is a set of independent forwards whose answer
//! logits share one normalization in the loss and stay directly
//! comparable at decode time.

use crate::coencode::{
    build_grid, coencode, pool_representations, CoencoderConfig, CoencoderParams, CoencoderVars,
    Variant,
};
use crate::data::EmbeddingTable;
use crate::nn::ParamGroup;
use crate::reader::{
    answer_logits, init_state, multi_paragraph_loss, run_hops, ParagraphLogits, ReaderConfig,
    ReaderParams, ReaderVars,
};
use crate::tensor::{Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Everything needed to rebuild the network's shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Weave blocks k.
    pub blocks: usize,
    /// LSTM hidden size h per direction.
    pub hidden: usize,
    /// Memory hops T (forced to 0 by the no-memory variant).
    pub hops: usize,
    /// Longest decodable answer span, in tokens past the start.
    pub max_span_len: usize,
    /// Embedding width e.
    pub embed_dim: usize,
    /// Extra feature width x.
    pub feature_width: usize,
    pub grid_dropout: f64,
    pub lstm_dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) {
        self.coencoder().validate();
        assert!(self.embed_dim >= 1, "model: embed_dim must be >= 1");
    }

    pub fn coencoder(&self) -> CoencoderConfig {
        CoencoderConfig {
            blocks: self.blocks,
            hidden: self.hidden,
            input_width: self
                .variant
                .combine_mode()
                .width(self.embed_dim, self.feature_width),
            variant: self.variant,
            grid_dropout: self.grid_dropout,
            lstm_dropout: self.lstm_dropout,
        }
    }

    pub fn reader(&self) -> ReaderConfig {
        ReaderConfig {
            hops: self.effective_hops(),
            max_span_len: self.max_span_len,
        }
    }

    /// Hop count with the no-memory ablation applied.
    pub fn effective_hops(&self) -> usize {
        if self.variant == Variant::NoMemNet {
            0
        } else {
            self.hops
        }
    }
}

/// All trainable state. The embedding matrix participates only when the
/// table is learned; pretrained vectors ride along frozen.
#[derive(Clone, Debug)]
pub struct ModelParams<F> {
    /// [rows, e] embedding matrix, padding row zero.
    pub embeddings: Tensor<F>,
    pub embeddings_trainable: bool,
    pub encoder: CoencoderParams<F>,
    pub reader: ReaderParams<F>,
}

pub struct ModelVars {
    pub embeddings: Var,
    pub encoder: CoencoderVars,
    pub reader: ReaderVars,
}

impl<F: Real> ModelParams<F> {
    pub fn init(cfg: &ModelConfig, table: &EmbeddingTable, rng: &mut ChaCha8Rng) -> Self {
        cfg.validate();
        assert_eq!(
            table.dim, cfg.embed_dim,
            "embedding table width {} does not match the config's {}",
            table.dim, cfg.embed_dim
        );
        ModelParams {
            embeddings: table.vectors.cast::<F>(),
            embeddings_trainable: table.trainable,
            encoder: CoencoderParams::init(&cfg.coencoder(), rng),
            reader: ReaderParams::init(2 * cfg.hidden, rng),
        }
    }

    /// Put every tensor on the graph. Trainable leaves are appended to
    /// `reg` in the same order `for_each` visits them.
    pub fn bind(&self, g: &mut Graph<F>, reg: &mut Vec<Var>) -> ModelVars {
        let embeddings = if self.embeddings_trainable {
            let v = g.leaf(self.embeddings.clone(), true);
            reg.push(v);
            v
        } else {
            g.constant(self.embeddings.clone())
        };
        ModelVars {
            embeddings,
            encoder: self.encoder.bind(g, reg),
            reader: self.reader.bind(g, reg),
        }
    }
}

impl<F: Real> ParamGroup<F> for ModelParams<F> {
    fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        if self.embeddings_trainable {
            f(&crate::nn::join(prefix, "embeddings"), &self.embeddings);
        }
        self.encoder.for_each(&crate::nn::join(prefix, "encoder"), f);
        self.reader.for_each(&crate::nn::join(prefix, "reader"), f);
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        if self.embeddings_trainable {
            f(&crate::nn::join(prefix, "embeddings"), &mut self.embeddings);
        }
        self.encoder
            .for_each_mut(&crate::nn::join(prefix, "encoder"), f);
        self.reader
            .for_each_mut(&crate::nn::join(prefix, "reader"), f);
    }
}

/// One paragraph's model input: embedding row ids (padding allowed as a
/// suffix), the real length, and the [n_pad, x] feature matrix.
pub struct ParagraphInput<'a> {
    pub context_ids: &'a [usize],
    pub c_len: usize,
    pub features: &'a Tensor<f32>,
}

/// Raw answer logits for one paragraph plus its real length.
#[derive(Clone, Copy)]
pub struct ForwardOutput {
    pub start: Var,
    pub end: Var,
    pub c_len: usize,
}

/// Run the model over one (question, paragraph) pair. `train` carries
/// the dropout stream; `None` means evaluation mode.
pub fn forward_paragraph<F: Real>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    question_ids: &[usize],
    q_len: usize,
    para: &ParagraphInput,
    mut train: Option<&mut ChaCha8Rng>,
) -> ForwardOutput {
    assert!(
        q_len >= 1 && q_len <= question_ids.len(),
        "forward: question length {q_len} out of range"
    );
    assert!(
        para.c_len >= 1 && para.c_len <= para.context_ids.len(),
        "forward: context length {} out of range",
        para.c_len
    );
    assert_eq!(
        para.features.shape(),
        &[para.context_ids.len(), cfg.feature_width],
        "forward: feature matrix shape mismatch"
    );
    let ccfg = cfg.coencoder();
    let q_emb = g.gather_rows(vars.embeddings, question_ids);
    let c_emb = g.gather_rows(vars.embeddings, para.context_ids);
    let extras = g.constant(para.features.cast::<F>());
    let grid = build_grid(
        g,
        q_emb,
        c_emb,
        extras,
        q_len,
        para.c_len,
        &ccfg,
        train.as_deref_mut(),
    );
    let encoded = coencode(g, grid, &vars.encoder, &ccfg, train);
    let (q_repr, c_repr) = pool_representations(g, encoded, &vars.encoder);
    let s0 = init_state(g, q_repr, q_len);
    let s_t = run_hops(g, s0, c_repr, para.c_len, &vars.reader, cfg.effective_hops());
    let (start, end) = answer_logits(g, c_repr, s_t, &vars.reader);
    ForwardOutput {
        start,
        end,
        c_len: para.c_len,
    }
}

/// Forward every paragraph of an example and take the span cross-entropy
/// over their concatenated positions. `gold` is (paragraph, start, end).
pub fn example_loss<F: Real>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    question_ids: &[usize],
    q_len: usize,
    paragraphs: &[ParagraphInput],
    gold: (usize, usize, usize),
    mut train: Option<&mut ChaCha8Rng>,
) -> Var {
    assert!(!paragraphs.is_empty(), "loss needs at least one paragraph");
    let outputs: Vec<ForwardOutput> = paragraphs
        .iter()
        .map(|p| forward_paragraph(g, vars, cfg, question_ids, q_len, p, train.as_deref_mut()))
        .collect();
    let logits: Vec<ParagraphLogits> = outputs
        .iter()
        .map(|o| ParagraphLogits {
            start: o.start,
            end: o.end,
            len: o.c_len,
        })
        .collect();
    multi_paragraph_loss(g, &logits, gold.0, (gold.1, gold.2))
}

/// Verification utility: compare every parameter's analytic gradient of
/// the example loss against central differences, rebuilding the graph
/// for each probe. Returns the worst relative error
/// |analytic − numeric| / max(1, |analytic|). Evaluation mode only, so
/// the loss is deterministic across rebuilds.
pub fn model_gradient_max_error(
    cfg: &ModelConfig,
    params: &mut ModelParams<f64>,
    question_ids: &[usize],
    q_len: usize,
    paragraphs: &[ParagraphInput],
    gold: (usize, usize, usize),
    eps: f64,
) -> f64 {
    let analytic: Vec<Tensor<f64>> = {
        let mut g = Graph::new();
        let mut reg = Vec::new();
        let vars = params.bind(&mut g, &mut reg);
        let loss = example_loss(&mut g, &vars, cfg, question_ids, q_len, paragraphs, gold, None);
        g.backward(loss);
        reg.iter()
            .map(|&v| {
                g.grad(v)
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
            })
            .collect()
    };

    let eval = |p: &ModelParams<f64>| -> f64 {
        let mut g = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let loss = example_loss(&mut g, &vars, cfg, question_ids, q_len, paragraphs, gold, None);
        g.value(loss).item()
    };

    // Nudge one coordinate of the k-th tensor in walk order; walk order
    // matches the bind order used for `analytic`.
    let nudge = |p: &mut ModelParams<f64>, k: usize, coord: usize, delta: f64| {
        let mut seen = 0usize;
        p.for_each_mut("", &mut |_, t| {
            if seen == k {
                t.data_mut()[coord] += delta;
            }
            seen += 1;
        });
    };

    let mut worst = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        for coord in 0..grad.numel() {
            nudge(params, k, coord, eps);
            let up = eval(params);
            nudge(params, k, coord, -2.0 * eps);
            let down = eval(params);
            nudge(params, k, coord, eps);
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[coord];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};

    fn small_cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            blocks: 1,
            hidden: 2,
            hops: 2,
            max_span_len: 15,
            embed_dim: 3,
            feature_width: 2,
            grid_dropout: 0.3,
            lstm_dropout: 0.2,
        }
    }

    fn table(cfg: &ModelConfig) -> EmbeddingTable {
        let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
        EmbeddingTable::learned(words, cfg.embed_dim, &mut Streams::new(5).get(Purpose::Init))
    }

    fn features(n: usize, width: usize, sub: u64) -> Tensor<f32> {
        let mut rng = Streams::new(6).get_sub(Purpose::Synth, sub);
        let data: Vec<f32> = (0..n * width)
            .map(|_| crate::rng::uniform01(&mut rng) as f32)
            .collect();
        Tensor::new(vec![n, width], data)
    }

    #[test]
    fn walk_and_bind_orders_agree() {
        let cfg = small_cfg(Variant::Full);
        let params = ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(7).get(Purpose::Init));
        let mut names = Vec::new();
        params.for_each("model", &mut |name, _| names.push(name.to_string()));
        let mut g = Graph::new();
        let mut reg = Vec::new();
        params.bind(&mut g, &mut reg);
        assert_eq!(names.len(), reg.len());
        assert_eq!(names[0], "model.embeddings");
        assert!(names.iter().any(|n| n == "model.encoder.block0.question.fwd.weights"));
        assert!(names.iter().any(|n| n == "model.reader.gru.w_update"));
    }

    #[test]
    fn frozen_embeddings_leave_the_registry() {
        let cfg = small_cfg(Variant::Full);
        let mut t = table(&cfg);
        t.trainable = false;
        let params = ModelParams::<f64>::init(&cfg, &t, &mut Streams::new(7).get(Purpose::Init));
        let mut names = Vec::new();
        params.for_each("m", &mut |name, _| names.push(name.to_string()));
        assert!(names.iter().all(|n| !n.contains("embeddings")));
        let trainable = ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(7).get(Purpose::Init));
        let mut with = Vec::new();
        trainable.for_each("m", &mut |name, _| with.push(name.to_string()));
        assert_eq!(with.len(), names.len() + 1);
    }

    #[test]
    fn forward_yields_per_position_logits() {
        let cfg = small_cfg(Variant::Full);
        let params = ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(8).get(Purpose::Init));
        let mut g = Graph::new();
        let mut reg = Vec::new();
        let vars = params.bind(&mut g, &mut reg);
        let feats = features(5, cfg.feature_width, 0);
        let out = forward_paragraph(
            &mut g,
            &vars,
            &cfg,
            &[2, 3, 4],
            3,
            &ParagraphInput {
                context_ids: &[5, 6, 7, 2, 3],
                c_len: 5,
                features: &feats,
            },
            None,
        );
        assert_eq!(g.value(out.start).shape(), &[5]);
        assert_eq!(g.value(out.end).shape(), &[5]);
        assert!(g.value(out.start).is_finite());
    }

    #[test]
    fn padding_question_and_context_leaves_logits_unchanged() {
        let cfg = small_cfg(Variant::Full);
        let params = ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(9).get(Purpose::Init));
        let feats = features(4, cfg.feature_width, 1);
        let run = |q_ids: &[usize], c_ids: &[usize], feats: &Tensor<f32>| -> (Vec<f64>, Vec<f64>) {
            let mut g = Graph::new();
            let mut reg = Vec::new();
            let vars = params.bind(&mut g, &mut reg);
            let out = forward_paragraph(
                &mut g,
                &vars,
                &cfg,
                q_ids,
                3,
                &ParagraphInput {
                    context_ids: c_ids,
                    c_len: 4,
                    features: feats,
                },
                None,
            );
            (
                g.value(out.start).data()[..4].to_vec(),
                g.value(out.end).data()[..4].to_vec(),
            )
        };
        let (s0, e0) = run(&[2, 3, 4], &[5, 6, 7, 2], &feats);
        // Pad with suffix ids and zero feature rows.
        let mut padded = feats.data().to_vec();
        padded.extend([0.0; 2 * 3]);
        let feats_pad = Tensor::new(vec![7, cfg.feature_width], padded);
        let (s1, e1) = run(&[2, 3, 4, 0, 0], &[5, 6, 7, 2, 0, 0, 0], &feats_pad);
        for (a, b) in s0.iter().zip(&s1).chain(e0.iter().zip(&e1)) {
            assert!((a - b).abs() <= 1e-5, "padding changed a logit: {a} vs {b}");
        }
    }

    #[test]
    fn multi_paragraph_loss_runs_and_backprops() {
        let cfg = small_cfg(Variant::Full);
        let params = ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(10).get(Purpose::Init));
        let mut g = Graph::new();
        let mut reg = Vec::new();
        let vars = params.bind(&mut g, &mut reg);
        let f1 = features(4, cfg.feature_width, 2);
        let f2 = features(3, cfg.feature_width, 3);
        let loss = example_loss(
            &mut g,
            &vars,
            &cfg,
            &[2, 3],
            2,
            &[
                ParagraphInput {
                    context_ids: &[4, 5, 6, 7],
                    c_len: 4,
                    features: &f1,
                },
                ParagraphInput {
                    context_ids: &[6, 7, 2],
                    c_len: 3,
                    features: &f2,
                },
            ],
            (1, 0, 1),
            None,
        );
        assert!(g.value(loss).item() > 0.0);
        g.backward(loss);
        let touched = reg.iter().filter(|&&v| g.grad(v).is_some()).count();
        assert_eq!(touched, reg.len(), "every parameter should receive gradient");
    }

    #[test]
    fn training_mode_is_deterministic_in_the_dropout_stream() {
        let cfg = small_cfg(Variant::Full);
        let params = ModelParams::<f32>::init(&cfg, &table(&cfg), &mut Streams::new(11).get(Purpose::Init));
        let feats = features(4, cfg.feature_width, 4);
        let run = || -> f32 {
            let mut g = Graph::new();
            let mut reg = Vec::new();
            let vars = params.bind(&mut g, &mut reg);
            let mut rng = Streams::new(50).get_sub(Purpose::Dropout, 9);
            let loss = example_loss(
                &mut g,
                &vars,
                &cfg,
                &[2, 3],
                2,
                &[ParagraphInput {
                    context_ids: &[4, 5, 6, 7],
                    c_len: 4,
                    features: &feats,
                }],
                (0, 2, 2),
                Some(&mut rng),
            );
            g.value(loss).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn every_variant_forwards() {
        for variant in [
            Variant::Full,
            Variant::CatQC,
            Variant::CatQCDotProduct,
            Variant::NoRnn,
            Variant::NoConv11,
            Variant::NoMemNet,
        ] {
            let cfg = small_cfg(variant);
            let params =
                ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(12).get(Purpose::Init));
            let mut g = Graph::new();
            let mut reg = Vec::new();
            let vars = params.bind(&mut g, &mut reg);
            let feats = features(3, cfg.feature_width, 5);
            let out = forward_paragraph(
                &mut g,
                &vars,
                &cfg,
                &[2, 3],
                2,
                &ParagraphInput {
                    context_ids: &[4, 5, 6],
                    c_len: 3,
                    features: &feats,
                },
                None,
            );
            assert!(g.value(out.start).is_finite(), "{variant:?}");
        }
    }

    #[test]
    fn full_model_gradients_match_central_differences() {
        // The reference configuration: 3 question tokens, 4 context
        // tokens, h=2, one block, two hops, in f64.
        let cfg = small_cfg(Variant::Full);
        let mut params =
            ModelParams::<f64>::init(&cfg, &table(&cfg), &mut Streams::new(13).get(Purpose::Init));
        let feats = features(4, cfg.feature_width, 6);
        let worst = model_gradient_max_error(
            &cfg,
            &mut params,
            &[2, 3, 4],
            3,
            &[ParagraphInput {
                context_ids: &[5, 6, 7, 2],
                c_len: 4,
                features: &feats,
            }],
            (0, 1, 2),
            1e-5,
        );
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }
}
