//! Experiment harness: hop sweeps and ablation grids over one dataset.
//!
//! Every cell trains from the same base configuration and seed, varying
//! exactly one axis (memory hops or architecture variant), so cell
//! differences are attributable to that axis alone. Cells are evaluated
//! on the dev split with the same code path as a standalone evaluation,
//! which makes a one-cell grid bit-identical to running training and
//! evaluation by hand.

use crate::coencode::Variant;
use crate::config::{variant_name, ConfigError, RunConfig, TrainMode};
use crate::train::{evaluate_model, train_model, LoadedData, TrainError};
use serde::Serialize;
use std::path::Path;

/// Hop counts covered by the sweep.
pub const HOP_GRID: &[usize] = &[0, 1, 3, 5, 7, 9];

/// All architecture variants, full model first.
pub const ABLATION_GRID: &[Variant] = &[
    Variant::Full,
    Variant::CatQC,
    Variant::CatQCDotProduct,
    Variant::NoRnn,
    Variant::NoConv11,
    Variant::NoMemNet,
];

/// One trained-and-scored grid cell.
#[derive(Clone, Debug, Serialize)]
pub struct GridCell {
    /// Value of the swept axis, e.g. `"3"` hops or `"no-rnn"`.
    pub label: String,
    pub em: f64,
    pub f1: f64,
    /// Epochs actually run (early stopping may cut training short).
    pub epochs: usize,
}

/// Train and score one configuration on the dev split.
fn run_cell(
    run: &RunConfig,
    data: &LoadedData,
    label: String,
    out_dir: Option<&Path>,
) -> Result<GridCell, TrainError> {
    let cell_dir = out_dir.map(|d| d.join(&label));
    let outcome = train_model(run, data, cell_dir.as_deref())?;
    let summary = evaluate_model(
        &outcome.checkpoint.meta.model_config(),
        &outcome.checkpoint.params,
        &outcome.checkpoint.embedding_table(),
        &data.dev,
        run.mode == TrainMode::Paragraph,
    );
    Ok(GridCell {
        label,
        em: summary.em,
        f1: summary.f1,
        epochs: outcome.history.len(),
    })
}

/// Train one model per hop count, all other settings shared.
pub fn hop_sweep(
    base: &RunConfig,
    data: &LoadedData,
    hops: &[usize],
    out_dir: Option<&Path>,
) -> Result<Vec<GridCell>, TrainError> {
    assert!(!hops.is_empty(), "hop_sweep: empty grid");
    for &t in hops {
        if !HOP_GRID.contains(&t) {
            return Err(ConfigError::BadValue {
                key: "hops".into(),
                value: t.to_string(),
                message: format!("sweep values must come from {HOP_GRID:?}"),
            }
            .into());
        }
    }
    hops.iter()
        .map(|&t| {
            let mut run = base.clone();
            run.hops = t;
            run_cell(&run, data, format!("hops-{t}"), out_dir)
        })
        .collect()
}

/// Train one model per architecture variant, all other settings shared.
pub fn ablation_grid(
    base: &RunConfig,
    data: &LoadedData,
    variants: &[Variant],
    out_dir: Option<&Path>,
) -> Result<Vec<GridCell>, TrainError> {
    assert!(!variants.is_empty(), "ablation_grid: empty grid");
    variants
        .iter()
        .map(|&v| {
            let mut run = base.clone();
            run.variant = v;
            run_cell(&run, data, variant_name(v).to_string(), out_dir)
        })
        .collect()
}

/// Markdown table of a grid, one row per cell.
pub fn grid_markdown(axis: &str, cells: &[GridCell]) -> String {
    let mut out = format!("| {axis} | EM | F1 | epochs |\n|---|---|---|---|\n");
    for c in cells {
        out.push_str(&format!(
            "| {} | {:.1} | {:.1} | {} |\n",
            c.label, c.em, c.f1, c.epochs
        ));
    }
    out
}

/// TSV table of a grid.
pub fn grid_tsv(axis: &str, cells: &[GridCell]) -> String {
    let mut out = format!("{axis}\tem\tf1\tepochs\n");
    for c in cells {
        out.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", c.label, c.em, c.f1, c.epochs));
    }
    out
}
