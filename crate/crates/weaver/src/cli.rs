//! Command-line surface: train, finetune, eval, predict, index, pipeline
//! and experiment, all sharing one configuration scheme.
//!
//! Configuration precedence is fixed: built-in defaults, then the
//! `--config` file's `key = value` lines, then individual flags. Every
//! command prints machine-readable output (JSON lines or TSV/markdown
//! tables) and writes report files when `--out-dir` is given.

use crate::checkpoint::{checkpoint_load, CheckpointError};
use crate::config::{load_config_file, parse_variant, ConfigError, RunConfig};
use crate::data::Example;
use crate::eval::{evaluate_dataset, EvalError, EvalMode, EvalResult};
use crate::experiment::{ablation_grid, grid_markdown, grid_tsv, hop_sweep, ABLATION_GRID, HOP_GRID};
use crate::pipeline::{
    answer_in_context, k_sweep, load_questions, run_pipeline, score_answers, sweep_table_markdown,
    sweep_table_tsv, PipelineError,
};
use crate::retriever::{index_build, store_load, store_save, DocumentStore, RetrieveError};
use crate::train::{evaluate_model, finetune_model, load_dataset, train_model, TrainError};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser, Debug)]
#[command(
    name = "weaver",
    version,
    about = "Question answering with a co-encoding reader and TF-IDF retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration file plus the individual overrides shared by the
/// training-flavored commands.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file applied over built-in defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training/evaluation mode: paragraph | document.
    #[arg(long)]
    pub mode: Option<String>,
    /// Retrieval depth.
    #[arg(long)]
    pub k: Option<usize>,
    /// Memory hop count.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Weave block count.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Hidden size per LSTM direction.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Architecture variant: full | cat-qc | cat-qc-dot | no-rnn |
    /// no-conv11 | no-memnet.
    #[arg(long, value_name = "VARIANT")]
    pub ablation: Option<String>,
}

impl ConfigArgs {
    /// Resolve the effective run configuration.
    pub fn build(&self) -> Result<RunConfig, ConfigError> {
        let mut run = match &self.config {
            Some(p) => load_config_file(p)?,
            None => RunConfig::default(),
        };
        let overrides: [(&str, Option<String>); 7] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("k", self.k.map(|v| v.to_string())),
            ("hops", self.hops.map(|v| v.to_string())),
            ("blocks", self.blocks.map(|v| v.to_string())),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("variant", self.ablation.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                run.apply(key, &v)?;
            }
        }
        run.validate()?;
        Ok(run)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model, keeping the best-dev checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training data (ignored by the synthetic formats).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dev data, evaluated each epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Directory for best.wvr and train_log.jsonl.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Resume a checkpoint's parameters on new data (fresh optimizer).
    Finetune {
        /// Checkpoint to resume.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training data (ignored by the synthetic formats).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dev data, evaluated each epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Fine-tuning epochs.
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Directory for best.wvr and train_log.jsonl.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to score (ignored by the synthetic formats, which
        /// regenerate their held-out split from the checkpoint's seed).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Read mode: paragraph | document.
        #[arg(long)]
        mode: Option<String>,
        /// Directory for eval_report.tsv and eval_report.json.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Answer one question against one context.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// The question, verbatim.
        #[arg(long, conflicts_with = "question_file")]
        question: Option<String>,
        /// File holding the question.
        #[arg(long, value_name = "PATH")]
        question_file: Option<PathBuf>,
        /// The context, verbatim.
        #[arg(long, conflicts_with = "context_file")]
        context: Option<String>,
        /// File holding the context.
        #[arg(long, value_name = "PATH")]
        context_file: Option<PathBuf>,
    },
    /// Build the retrieval index over a JSONL corpus.
    Index {
        /// Corpus: one {"id", "title", "text"} record per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Output path for the store-plus-index file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve-and-read open questions against an indexed corpus.
    Pipeline {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Store-plus-index file from `weaver index`.
        #[arg(long)]
        index: PathBuf,
        /// Questions JSONL: {"id", "question", "answers"?}.
        #[arg(long)]
        questions: PathBuf,
        /// Retrieval depth (default: the checkpoint's configured k).
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated depths: score the pipeline at each k instead
        /// of answering once.
        #[arg(long, value_name = "K,K,...")]
        sweep: Option<String>,
        /// Directory for answers.jsonl and report files.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Train a grid of configurations and tabulate dev scores.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Grid axis: hop-sweep | ablation.
        #[arg(long)]
        kind: String,
        /// Training data (ignored by the synthetic formats).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dev data for cell scores.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Comma-separated hop counts (hop-sweep only; default all).
        #[arg(long, value_name = "T,T,...")]
        hop_grid: Option<String>,
        /// Comma-separated variant names (ablation only; default all).
        #[arg(long, value_name = "V,V,...")]
        variants: Option<String>,
        /// Directory for per-cell checkpoints and the report tables.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
}

/// Parse the CLI and run the chosen command; the returned code is the
/// process exit status.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train {
            cfg,
            train,
            dev,
            out_dir,
        } => cmd_train(&cfg, train.as_deref(), dev.as_deref(), out_dir.as_deref()),
        Command::Finetune {
            checkpoint,
            train,
            dev,
            epochs,
            out_dir,
        } => cmd_finetune(
            &checkpoint,
            train.as_deref(),
            dev.as_deref(),
            epochs,
            out_dir.as_deref(),
        ),
        Command::Eval {
            checkpoint,
            data,
            mode,
            out_dir,
        } => cmd_eval(&checkpoint, data.as_deref(), mode.as_deref(), out_dir.as_deref()),
        Command::Predict {
            checkpoint,
            question,
            question_file,
            context,
            context_file,
        } => cmd_predict(&checkpoint, question, question_file, context, context_file),
        Command::Index { corpus, out } => cmd_index(&corpus, &out),
        Command::Pipeline {
            checkpoint,
            index,
            questions,
            k,
            sweep,
            out_dir,
        } => cmd_pipeline(
            &checkpoint,
            &index,
            &questions,
            k,
            sweep.as_deref(),
            out_dir.as_deref(),
        ),
        Command::Experiment {
            cfg,
            kind,
            train,
            dev,
            hop_grid,
            variants,
            out_dir,
        } => cmd_experiment(
            &cfg,
            &kind,
            train.as_deref(),
            dev.as_deref(),
            hop_grid.as_deref(),
            variants.as_deref(),
            out_dir.as_deref(),
        ),
    }
}

// ── helpers ──────────────────────────────────────────────────────────────

fn write_report(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    let values: Result<Vec<usize>, _> =
        s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!(
            "{what} must be a comma-separated list of numbers, got {s:?}"
        ))),
    }
}

fn print_history(history: &[crate::train::EpochLog]) {
    for log in history {
        println!("{}", serde_json::to_string(log).expect("epoch logs serialize"));
    }
}

/// Gold answer texts per example id, for report scoring.
fn gold_table(examples: &[Example]) -> Vec<(String, Vec<String>)> {
    examples
        .iter()
        .map(|ex| {
            (
                ex.id.clone(),
                ex.golds.iter().map(|g| g.text.clone()).collect(),
            )
        })
        .collect()
}

fn write_eval_reports(dir: Option<&Path>, result: &EvalResult) -> Result<(), CliError> {
    if let Some(dir) = dir {
        write_report(dir, "eval_report.tsv", &result.report_tsv())?;
        write_report(dir, "eval_report.json", &result.report_json())?;
    }
    Ok(())
}

// ── commands ─────────────────────────────────────────────────────────────

fn cmd_train(
    cfg: &ConfigArgs,
    train: Option<&Path>,
    dev: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let run = cfg.build()?;
    let data = load_dataset(&run, train, dev)?;
    let outcome = train_model(&run, &data, out_dir)?;
    print_history(&outcome.history);
    if let Some(m) = outcome.checkpoint.meta.best_metric {
        println!("best dev metric: {m:.2}");
    }
    if let Some(path) = &outcome.checkpoint_path {
        println!("checkpoint: {}", path.display());
    }
    Ok(())
}

fn cmd_finetune(
    checkpoint: &Path,
    train: Option<&Path>,
    dev: Option<&Path>,
    epochs: usize,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = checkpoint_load(checkpoint)?;
    let run = ckpt.meta.config.clone();
    let data = load_dataset(&run, train, dev)?;
    let outcome = finetune_model(ckpt, &data, epochs, out_dir)?;
    print_history(&outcome.history);
    if let Some(path) = &outcome.checkpoint_path {
        println!("checkpoint: {}", path.display());
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    data_path: Option<&Path>,
    mode: Option<&str>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = checkpoint_load(checkpoint)?;
    let mut run = ckpt.meta.config.clone();
    if let Some(m) = mode {
        run.apply("mode", m)?;
    }
    // Non-synthetic formats score the one file given; synthetic ones
    // regenerate their held-out split.
    let data = if run.format.is_synthetic() {
        load_dataset(&run, None, None)?
    } else {
        let path = data_path
            .ok_or_else(|| CliError::Usage("eval needs --data for this format".to_string()))?;
        load_dataset(&run, Some(path), None)?
    };
    if data.prepend != ckpt.meta.prepend {
        return Err(CliError::Usage(format!(
            "dataset prepends {:?} but the checkpoint was trained with {:?}",
            data.prepend, ckpt.meta.prepend
        )));
    }
    let examples = if run.format.is_synthetic() { &data.dev } else { &data.train };
    let summary = evaluate_model(
        &ckpt.meta.model_config(),
        &ckpt.params,
        &ckpt.embedding_table(),
        examples,
        run.mode == crate::config::TrainMode::Paragraph,
    );
    let predictions: Vec<(String, String)> = summary
        .predictions
        .iter()
        .map(|p| (p.id.clone(), p.answer.clone()))
        .collect();
    let result = evaluate_dataset(&predictions, &gold_table(examples), EvalMode::EmF1)?;
    write_eval_reports(out_dir, &result)?;
    println!("{}", result.report_json());
    Ok(())
}

fn cmd_predict(
    checkpoint: &Path,
    question: Option<String>,
    question_file: Option<PathBuf>,
    context: Option<String>,
    context_file: Option<PathBuf>,
) -> Result<(), CliError> {
    let read_arg = |inline: Option<String>,
                    file: Option<PathBuf>,
                    what: &str|
     -> Result<String, CliError> {
        match (inline, file) {
            (Some(s), None) => Ok(s),
            (None, Some(p)) => std::fs::read_to_string(&p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            }),
            _ => Err(CliError::Usage(format!(
                "predict needs exactly one of --{what} or --{what}-file"
            ))),
        }
    };
    let question = read_arg(question, question_file, "question")?;
    let context = read_arg(context, context_file, "context")?;
    if context.trim().is_empty() {
        return Err(CliError::Usage("the context is empty".to_string()));
    }
    let ckpt = checkpoint_load(checkpoint)?;
    let answer = answer_in_context(&ckpt, &question, &context)?;
    println!("{}", serde_json::to_string(&answer).expect("answers serialize"));
    Ok(())
}

fn cmd_index(corpus: &Path, out: &Path) -> Result<(), CliError> {
    let store = DocumentStore::from_jsonl(corpus)?;
    if store.is_empty() {
        return Err(CliError::Usage(format!(
            "corpus {} holds no documents",
            corpus.display()
        )));
    }
    let index = index_build(&store);
    store_save(&store, &index, out)?;
    println!("indexed {} documents -> {}", store.len(), out.display());
    Ok(())
}

fn cmd_pipeline(
    checkpoint: &Path,
    index_path: &Path,
    questions_path: &Path,
    k: Option<usize>,
    sweep: Option<&str>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let ckpt = checkpoint_load(checkpoint)?;
    let (store, index) = store_load(index_path)?;
    let questions = load_questions(questions_path)?;
    if let Some(list) = sweep {
        let ks = parse_usize_list(list, "--sweep")?;
        if ks.iter().any(|&k| k == 0) {
            return Err(CliError::Usage("--sweep depths must be >= 1".to_string()));
        }
        let rows = k_sweep(&ckpt, &store, &index, &questions, &ks, EvalMode::EmF1)?;
        print!("{}", sweep_table_markdown(&rows));
        if let Some(dir) = out_dir {
            write_report(dir, "k_sweep.md", &sweep_table_markdown(&rows))?;
            write_report(dir, "k_sweep.tsv", &sweep_table_tsv(&rows))?;
        }
        return Ok(());
    }
    let k = k.unwrap_or(ckpt.meta.config.k);
    if k == 0 {
        return Err(CliError::Usage("--k must be >= 1".to_string()));
    }
    let answers = run_pipeline(&ckpt, &store, &index, &questions, k)?;
    let mut lines = String::new();
    for a in &answers {
        lines.push_str(&serde_json::to_string(a).expect("answers serialize"));
        lines.push('\n');
    }
    print!("{lines}");
    if let Some(dir) = out_dir {
        write_report(dir, "answers.jsonl", &lines)?;
    }
    if let Some(result) = score_answers(&answers, &questions, EvalMode::EmF1)? {
        write_eval_reports(out_dir, &result)?;
        println!("{}", result.report_json());
    }
    Ok(())
}

fn cmd_experiment(
    cfg: &ConfigArgs,
    kind: &str,
    train: Option<&Path>,
    dev: Option<&Path>,
    hop_grid: Option<&str>,
    variants: Option<&str>,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    enum Grid {
        Hops(Vec<usize>),
        Variants(Vec<crate::coencode::Variant>),
    }
    let grid = match kind {
        "hop-sweep" => Grid::Hops(match hop_grid {
            Some(list) => parse_usize_list(list, "--hop-grid")?,
            None => HOP_GRID.to_vec(),
        }),
        "ablation" => Grid::Variants(match variants {
            Some(list) => list
                .split(',')
                .map(|name| parse_variant(name.trim()).map_err(CliError::Usage))
                .collect::<Result<Vec<_>, _>>()?,
            None => ABLATION_GRID.to_vec(),
        }),
        other => {
            return Err(CliError::Usage(format!(
                "unknown experiment kind {other:?} (expected hop-sweep or ablation)"
            )))
        }
    };
    let run = cfg.build()?;
    let data = load_dataset(&run, train, dev)?;
    let (axis, cells) = match grid {
        Grid::Hops(hops) => ("hops", hop_sweep(&run, &data, &hops, out_dir)?),
        Grid::Variants(grid) => ("variant", ablation_grid(&run, &data, &grid, out_dir)?),
    };
    print!("{}", grid_markdown(axis, &cells));
    if let Some(dir) = out_dir {
        write_report(dir, "experiment.md", &grid_markdown(axis, &cells))?;
        write_report(dir, "experiment.tsv", &grid_tsv(axis, &cells))?;
    }
    Ok(())
}
