//! JSON and CSV artifact writers.
//!
//! Reports are serialized with stable field order and CSV floats use 17
//! significant digits, so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fracgauge::geometry::Mesh;
use serde::Serialize;

use crate::config::RunConfig;

/// Fixed CSV header shared by per-node and per-term tables.
pub const CSV_HEADERS: [&str; 6] = ["node_x", "node_y", "delta", "value", "bound", "margin"];

/// Artifact for solve and gauge runs.
#[derive(Debug, Serialize)]
pub struct SolveArtifact<'a> {
    /// "solve" or "gauge".
    pub command: &'a str,
    /// Echo of the run configuration.
    pub config: &'a RunConfig,
    /// Mesh size.
    pub nodes: usize,
    /// Whether the series met its tolerance.
    pub converged: bool,
    /// Process exit code for this run.
    pub exit_code: u8,
    /// Series terms accumulated.
    pub terms_used: usize,
    /// Sup norm of the last increment examined.
    pub last_increment_sup: f64,
    /// Estimate of the operator norm used for the tail bound.
    pub t_norm_estimate: f64,
    /// Sup norm of the equation residual after truncation.
    pub residual_sup: f64,
    /// Mean of the solution over nodes with δ ≥ 0.1.
    pub interior_mean: f64,
    /// Smallest solution value.
    pub value_min: f64,
    /// Largest solution value.
    pub value_sup: f64,
}

/// Artifact for verify runs; `detail` is check-specific.
#[derive(Debug, Serialize)]
pub struct VerifyArtifact<'a, T: Serialize> {
    /// Always "verify".
    pub command: &'a str,
    /// The check that ran.
    pub check: &'a str,
    /// Echo of the run configuration.
    pub config: &'a RunConfig,
    /// Whether the check's assertions passed.
    pub pass: bool,
    /// Check-specific numbers.
    pub detail: T,
}

/// Writes a JSON artifact with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, artifact: &T) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, artifact)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_row(
    out: &mut csv::Writer<BufWriter<File>>,
    row: [f64; 6],
) -> Result<(), csv::Error> {
    out.write_record(row.iter().map(|v| format!("{v:.16e}")))
}

/// Writes one CSV row per mesh node: coordinates, boundary distance, the
/// solution value, and optional per-node bound and margin columns (zeros
/// when absent).
pub fn write_node_csv(
    path: &Path,
    mesh: &Mesh,
    values: &[f64],
    bounds: Option<&[f64]>,
    margins: Option<&[f64]>,
) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(CSV_HEADERS)?;
    for i in 0..mesh.len() {
        write_row(
            &mut out,
            [
                mesh.nodes[i][0],
                mesh.nodes[i][1],
                mesh.delta[i],
                values[i],
                bounds.map_or(0.0, |b| b[i]),
                margins.map_or(0.0, |m| m[i]),
            ],
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes one CSV row per series term under the shared headers: the term
/// index in `node_x`, the term's interior mean in `value`, the partial-sum
/// mean in `bound`, and the term's deviation from 1 in `margin`.
pub fn write_term_csv(
    path: &Path,
    per_term_means: &[f64],
    partial_sum_means: &[f64],
) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    out.write_record(CSV_HEADERS)?;
    for (j, (term, partial)) in per_term_means.iter().zip(partial_sum_means).enumerate() {
        write_row(&mut out, [j as f64, 0.0, 0.0, *term, *partial, 1.0 - term])?;
    }
    out.flush()?;
    Ok(())
}
