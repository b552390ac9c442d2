//! Metrics CSV emission and cross-seed aggregation.
//!
//! One row per evaluation point, fixed column order, floats printed at nine
//! significant digits. Files are rewritten atomically on every append so an
//! interrupted run leaves a complete, parseable file.

use std::path::{Path, PathBuf};

use crate::demos::write_atomic;
use crate::error::{Result, SocoError};
use crate::marl::MetricsRow;

pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "mean_return",
    "std_return",
    "critic_loss_1",
    "critic_loss_2",
    "actor_loss",
    "mean_edit_norm",
    "gating_entropy",
];

/// Plain-decimal formatting at nine significant digits (`2.98` ->
/// `"2.98000000"`).
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        // Metrics values are validated upstream; keep the file parseable.
        return "nan".into();
    }
    if v == 0.0 {
        return "0.00000000".into();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

fn row_line(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        row.step,
        format_sig9(row.mean_return),
        format_sig9(row.std_return),
        format_sig9(row.critic_loss_1),
        format_sig9(row.critic_loss_2),
        format_sig9(row.actor_loss),
        format_sig9(row.mean_edit_norm),
        format_sig9(row.gating_entropy),
    )
}

/// Accumulates rows and persists the whole file atomically on each append.
pub struct MetricsWriter {
    path: PathBuf,
    rows: Vec<MetricsRow>,
}

impl MetricsWriter {
    pub fn new(path: PathBuf) -> Self {
        MetricsWriter {
            path,
            rows: Vec::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(SocoError::Invalid(format!(
                    "metrics rows must be strictly increasing in step ({} after {})",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row.clone());
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        let mut out = String::new();
        out.push_str(&METRICS_COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row_line(row));
            out.push('\n');
        }
        write_atomic(&self.path, out.as_bytes())
    }
}

/// Parses a metrics CSV produced by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    if !path.exists() {
        return Err(SocoError::MissingInput {
            path: path.to_path_buf(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| SocoError::io("read metrics", e))?;
    let bad = |reason: String| SocoError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if header != METRICS_COLUMNS.join(",") {
        return Err(bad(format!("unexpected header {header}")));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != METRICS_COLUMNS.len() {
            return Err(bad(format!("row {} has {} fields", ln + 2, fields.len())));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| bad(format!("row {} field {} is not numeric", ln + 2, i)))
        };
        rows.push(MetricsRow {
            step: fields[0]
                .parse()
                .map_err(|_| bad(format!("row {} has bad step", ln + 2)))?,
            mean_return: f(1)?,
            std_return: f(2)?,
            critic_loss_1: f(3)?,
            critic_loss_2: f(4)?,
            actor_loss: f(5)?,
            mean_edit_norm: f(6)?,
            gating_entropy: f(7)?,
        });
    }
    Ok(rows)
}

/// Writes a cross-seed aggregate: per step, mean and (population) standard
/// deviation of every column.
pub fn aggregate_metrics(inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(SocoError::Invalid("no metrics files to aggregate".into()));
    }
    let runs: Vec<Vec<MetricsRow>> = inputs
        .iter()
        .map(|p| read_metrics(p))
        .collect::<Result<_>>()?;
    let steps: Vec<u64> = runs[0].iter().map(|r| r.step).collect();
    for (i, run) in runs.iter().enumerate() {
        let got: Vec<u64> = run.iter().map(|r| r.step).collect();
        if got != steps {
            return Err(SocoError::Invalid(format!(
                "metrics file {} has a different step ladder",
                inputs[i].display()
            )));
        }
    }

    let mut text = String::from("step");
    for col in &METRICS_COLUMNS[1..] {
        text.push_str(&format!(",{col}_mean,{col}_std"));
    }
    text.push('\n');

    for (row_idx, &step) in steps.iter().enumerate() {
        text.push_str(&step.to_string());
        let cols: [fn(&MetricsRow) -> f64; 7] = [
            |r| r.mean_return,
            |r| r.std_return,
            |r| r.critic_loss_1,
            |r| r.critic_loss_2,
            |r| r.actor_loss,
            |r| r.mean_edit_norm,
            |r| r.gating_entropy,
        ];
        for get in cols {
            let vals: Vec<f64> = runs.iter().map(|run| get(&run[row_idx])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            text.push_str(&format!(",{},{}", format_sig9(mean), format_sig9(var.sqrt())));
        }
        text.push('\n');
    }
    write_atomic(out, text.as_bytes())
}
