//! Run configuration: one flat struct covering data, architecture and
//! optimization, with a default for every field. Values come from
//! `key = value` config files and command-line overrides; unknown keys
//! are rejected rather than ignored.

use crate::coencode::Variant;
use crate::model::ModelConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: cannot parse {value:?}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which loader turns the train/dev paths into examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    /// Span-answer JSON (SQuAD v1.1 layout).
    Squad,
    /// Numbered-story text files with tab-separated questions.
    Babi,
    /// Generated single-fact stories; paths are ignored.
    SynthSingle,
    /// Generated two-hop stories; paths are ignored.
    SynthTwoHop,
}

impl DataFormat {
    /// Synthetic formats generate their own data instead of reading files.
    pub fn is_synthetic(self) -> bool {
        matches!(self, DataFormat::SynthSingle | DataFormat::SynthTwoHop)
    }

    /// Model selection metric: F1 for span datasets, EM for story tasks.
    pub fn selects_on_f1(self) -> bool {
        matches!(self, DataFormat::Squad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Each example is its gold paragraph only.
    Paragraph,
    /// Each example spans its whole document; training adds sampled
    /// distractor paragraphs, evaluation decodes across all of them.
    Document,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format: DataFormat,
    pub variant: Variant,
    pub blocks: usize,
    pub hidden: usize,
    pub hops: usize,
    /// Longest decodable span, in tokens past the start (15 ⇒ 16-token spans).
    pub max_span_len: usize,
    /// Pretrained vector file; absent means a learned table.
    pub embed_path: Option<String>,
    /// Width of the learned table (pretrained files carry their own).
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub grid_dropout: f64,
    pub lstm_dropout: f64,
    pub mode: TrainMode,
    /// Distractor paragraphs sampled per example in document mode.
    pub doc_sample: usize,
    /// Documents retrieved per question in the pipeline.
    pub k: usize,
    /// Prepend the closed set of training answer words to every context.
    pub prepend_answers: bool,
    /// Training examples generated for synthetic formats.
    pub synth_count: usize,
    /// Location-vocabulary size for synthetic formats.
    pub synth_vocab: usize,
    /// Stop once dev EM reaches this value.
    pub early_stop_em: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format: DataFormat::Squad,
            variant: Variant::Full,
            blocks: 2,
            hidden: 200,
            hops: 3,
            max_span_len: 15,
            embed_path: None,
            embed_dim: 300,
            epochs: 20,
            batch_size: 32,
            seed: 42,
            lr: 0.002,
            grid_dropout: 0.3,
            lstm_dropout: 0.2,
            mode: TrainMode::Paragraph,
            doc_sample: 5,
            k: 5,
            prepend_answers: false,
            synth_count: 1000,
            synth_vocab: 30,
            early_stop_em: None,
        }
    }
}

impl RunConfig {
    /// Story-task preset: one weave block, h = 128, 128-dim learned
    /// embeddings, three hops, answer words prepended.
    pub fn babi() -> Self {
        RunConfig {
            format: DataFormat::Babi,
            blocks: 1,
            hidden: 128,
            hops: 3,
            embed_dim: 128,
            prepend_answers: true,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.blocks < 1 {
            return bad("blocks must be >= 1".into());
        }
        if self.hidden < 1 {
            return bad("hidden must be >= 1".into());
        }
        if self.embed_dim < 1 {
            return bad("embed_dim must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [("grid_dropout", self.grid_dropout), ("lstm_dropout", self.lstm_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.k < 1 || self.k > 25 {
            return bad(format!("k must lie in 1..=25, got {}", self.k));
        }
        if self.doc_sample < 1 {
            return bad("doc_sample must be >= 1".into());
        }
        if self.format.is_synthetic() && self.synth_count < 1 {
            return bad("synth_count must be >= 1".into());
        }
        Ok(())
    }

    /// Architecture view of this run, given the realized embedding and
    /// feature widths (pretrained files fix their own dimension).
    pub fn model_config(&self, embed_dim: usize, feature_width: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            blocks: self.blocks,
            hidden: self.hidden,
            hops: self.hops,
            max_span_len: self.max_span_len,
            embed_dim,
            feature_width,
            grid_dropout: self.grid_dropout,
            lstm_dropout: self.lstm_dropout,
        }
    }

    /// Set one field from its config-file key. Every key of the file
    /// format is handled here so CLI overrides share the code path.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            message,
        };
        macro_rules! parse {
            () => {
                value.parse().map_err(|e| bad(format!("{e}")))?
            };
        }
        match key {
            "format" => self.format = parse_format(value).map_err(bad)?,
            "variant" => self.variant = parse_variant(value).map_err(bad)?,
            "blocks" => self.blocks = parse!(),
            "hidden" => self.hidden = parse!(),
            "hops" => self.hops = parse!(),
            "max_span_len" => self.max_span_len = parse!(),
            "embed_path" => self.embed_path = Some(value.to_string()),
            "embed_dim" => self.embed_dim = parse!(),
            "epochs" => self.epochs = parse!(),
            "batch_size" => self.batch_size = parse!(),
            "seed" => self.seed = parse!(),
            "lr" => self.lr = parse!(),
            "grid_dropout" => self.grid_dropout = parse!(),
            "lstm_dropout" => self.lstm_dropout = parse!(),
            "mode" => self.mode = parse_mode(value).map_err(bad)?,
            "doc_sample" => self.doc_sample = parse!(),
            "k" => self.k = parse!(),
            "prepend_answers" => self.prepend_answers = parse!(),
            "synth_count" => self.synth_count = parse!(),
            "synth_vocab" => self.synth_vocab = parse!(),
            "early_stop_em" => self.early_stop_em = Some(parse!()),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

pub fn parse_format(s: &str) -> Result<DataFormat, String> {
    match s {
        "squad" => Ok(DataFormat::Squad),
        "babi" => Ok(DataFormat::Babi),
        "synth-single" => Ok(DataFormat::SynthSingle),
        "synth-two-hop" => Ok(DataFormat::SynthTwoHop),
        _ => Err(format!(
            "expected squad | babi | synth-single | synth-two-hop, got {s:?}"
        )),
    }
}

pub fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "full" => Ok(Variant::Full),
        "cat-qc" => Ok(Variant::CatQC),
        "cat-qc-dot" => Ok(Variant::CatQCDotProduct),
        "no-rnn" => Ok(Variant::NoRnn),
        "no-conv11" => Ok(Variant::NoConv11),
        "no-memnet" => Ok(Variant::NoMemNet),
        _ => Err(format!(
            "expected full | cat-qc | cat-qc-dot | no-rnn | no-conv11 | no-memnet, got {s:?}"
        )),
    }
}

/// Inverse of [`parse_variant`]: the stable command-line name.
pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::CatQC => "cat-qc",
        Variant::CatQCDotProduct => "cat-qc-dot",
        Variant::NoRnn => "no-rnn",
        Variant::NoConv11 => "no-conv11",
        Variant::NoMemNet => "no-memnet",
    }
}

pub fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "paragraph" => Ok(TrainMode::Paragraph),
        "document" => Ok(TrainMode::Document),
        _ => Err(format!("expected paragraph | document, got {s:?}")),
    }
}

/// Parse a UTF-8 `key = value` config file on top of the defaults.
/// Blank lines and `#` comments are skipped.
pub fn load_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut cfg = RunConfig::default();
    apply_config_text(&mut cfg, &text)?;
    Ok(cfg)
}

pub fn apply_config_text(cfg: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
            line: lineno + 1,
            text: raw.to_string(),
        })?;
        cfg.apply(key.trim(), value.trim())?;
    }
    Ok(())
}
