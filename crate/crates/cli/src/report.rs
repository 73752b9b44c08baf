//! Plot-ready CSV files derived from a finished run directory.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::CliError;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results under {0}: run `mecnn train` or `mecnn correlate` first")]
    MissingResults(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::MissingResults(_) => CliError::Config(e.to_string()),
            ReportError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(&dyn std::fmt::Display) -> ReportError + '_ {
    move |e| ReportError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn sorted_csvs(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, ReportError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir)(&e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Prediction overlay `t,actual,predicted` with `t` counting half-hours from
/// the first target of the partition, starting at 1.
fn write_overlay(src: &Path, dst: &Path) -> Result<usize, ReportError> {
    let mut r = csv::Reader::from_path(src).map_err(|e| io_err(src)(&e))?;
    let mut w = csv::Writer::from_path(dst).map_err(|e| io_err(dst)(&e))?;
    w.write_record(["t", "actual", "predicted"]).map_err(|e| io_err(dst)(&e))?;
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(src)(&e))?;
        n += 1;
        w.write_record([&n.to_string(), &rec[1], &rec[2]]).map_err(|e| io_err(dst)(&e))?;
    }
    w.flush().map_err(|e| io_err(dst)(&e))?;
    Ok(n)
}

fn render_summary(src: &Path) -> Result<String, ReportError> {
    let mut r = csv::Reader::from_path(src).map_err(|e| io_err(src)(&e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| io_err(src)(&e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut text = format!("| {} |\n", header.join(" | "));
    text.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(src)(&e))?;
        let cells: Vec<&str> = rec.iter().map(|c| if c.is_empty() { "-" } else { c }).collect();
        text.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    Ok(text)
}

/// Writes long-format plot data under `run_dir/plots`:
/// `overlay_*.csv` for every predictions file, `heatmap_*.csv` for every
/// correlation table, and `summary.md` when a summary table exists.
/// Returns the files written.
pub fn emit_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let predictions = sorted_csvs(run_dir, "predictions_")?;
    let corr_dir = run_dir.join("correlation");
    let tables = sorted_csvs(&corr_dir, "")?;
    let summary = run_dir.join("summary.csv");
    if predictions.is_empty() && tables.is_empty() && !summary.is_file() {
        return Err(ReportError::MissingResults(run_dir.to_path_buf()));
    }
    let plots = run_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| io_err(&plots)(&e))?;
    let mut written = Vec::new();
    for src in &predictions {
        let name = src.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let dst = plots.join(name.replacen("predictions_", "overlay_", 1));
        write_overlay(src, &dst)?;
        written.push(dst);
    }
    for src in &tables {
        let name = src.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let dst = plots.join(format!("heatmap_{name}"));
        fs::copy(src, &dst).map_err(|e| io_err(&dst)(&e))?;
        written.push(dst);
    }
    if summary.is_file() {
        let dst = plots.join("summary.md");
        fs::write(&dst, render_summary(&summary)?).map_err(|e| io_err(&dst)(&e))?;
        written.push(dst);
    }
    Ok(written)
}
