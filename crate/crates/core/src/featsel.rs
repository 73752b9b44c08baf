//! Day-block correlation studies and the input-channel selection rule.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BuildingMeta, EnergyVector, InputChannel, MultiEnergyDataset, SAMPLES_PER_DAY};
use crate::metrics::format_metric;

#[derive(Debug, Error, PartialEq)]
pub enum FeatselError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("series of length {len} is shorter than the window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("window and step must be positive")]
    BadWindow,
    #[error("correlation of the {0} channel is undefined")]
    UndefinedCorrelation(String),
    #[error("{0}")]
    Invalid(String),
}

/// Pearson correlation of two equal-length blocks, or `None` if either is
/// constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if x.is_empty() || constant(x) || constant(y) {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean of per-block Pearson correlations over blocks of `window` samples
/// starting every `step` samples. Blocks where either side is constant are
/// skipped; `None` if every block is skipped.
pub fn sliding_mean_correlation(
    x: &[f64],
    y: &[f64],
    window: usize,
    step: usize,
) -> Result<Option<f64>, FeatselError> {
    if window == 0 || step == 0 {
        return Err(FeatselError::BadWindow);
    }
    if x.len() != y.len() {
        return Err(FeatselError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < window {
        return Err(FeatselError::SeriesTooShort { len: x.len(), window });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start + window <= x.len() {
        if let Some(r) = pearson(&x[start..start + window], &y[start..start + window]) {
            sum += r;
            count += 1;
        }
        start += step;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// A labelled matrix of correlations; `None` marks undefined entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Row-major.
    pub values: Vec<Option<f64>>,
}

impl CorrTable {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.cols.len() + col]
    }

    pub fn find(&self, row: &str, col: &str) -> Option<Option<f64>> {
        let r = self.rows.iter().position(|s| s == row)?;
        let c = self.cols.iter().position(|s| s == col)?;
        Some(self.get(r, c))
    }

    /// Long format `row_signal,col_entity,r`, one line per cell; undefined
    /// cells are written as `NaN`.
    pub fn write_long_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_signal", "col_entity", "r"])?;
        for (i, row) in self.rows.iter().enumerate() {
            for (j, col) in self.cols.iter().enumerate() {
                let r = self.get(i, j).map_or_else(|| "NaN".to_string(), |v| format_metric(Some(v)));
                w.write_record([row.as_str(), col.as_str(), r.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of the defined off-diagonal entries of a square table.
    pub fn off_diagonal_mean(&self) -> Option<f64> {
        let n = self.rows.len();
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .filter_map(|(i, j)| self.get(i, j))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Previous-day candidate signals available in a dataset, in report order.
pub fn candidate_signals(ds: &MultiEnergyDataset) -> Vec<InputChannel> {
    let mut out: Vec<InputChannel> = EnergyVector::ALL.iter().map(|&v| InputChannel::Energy(v)).collect();
    if ds.temperature().is_some() {
        out.push(InputChannel::Temperature);
    }
    if ds.solar().is_some() {
        out.push(InputChannel::Solar);
    }
    out
}

fn signal(ds: &MultiEnergyDataset, building: usize, c: InputChannel) -> &[f64] {
    match c {
        InputChannel::Energy(v) => ds.series(building, v),
        InputChannel::Temperature => ds.temperature().expect("listed by candidate_signals"),
        InputChannel::Solar => ds.solar().expect("listed by candidate_signals"),
    }
}

fn check_period(ds: &MultiEnergyDataset, period: &Range<usize>) -> Result<(), FeatselError> {
    let d = SAMPLES_PER_DAY;
    if period.end > ds.len() || !period.start.is_multiple_of(d) || !period.end.is_multiple_of(d) || period.len() < 2 * d {
        return Err(FeatselError::Invalid(format!(
            "period {period:?} must cover at least two whole days of the {}-sample dataset",
            ds.len()
        )));
    }
    Ok(())
}

/// Correlation between a previous-day signal and the next day of `next`.
fn next_prev(prev: &[f64], next: &[f64], period: &Range<usize>) -> Result<Option<f64>, FeatselError> {
    let d = SAMPLES_PER_DAY;
    sliding_mean_correlation(
        &prev[period.start..period.end - d],
        &next[period.start + d..period.end],
        d,
        d,
    )
}

/// For one target vector: rows are candidate previous-day signals, columns
/// are buildings. Buildings whose target series is all zero come out
/// undefined.
pub fn next_prev_correlation_matrix(
    ds: &MultiEnergyDataset,
    target: EnergyVector,
    period: Range<usize>,
) -> Result<CorrTable, FeatselError> {
    check_period(ds, &period)?;
    let signals = candidate_signals(ds);
    let mut values = Vec::with_capacity(signals.len() * ds.num_buildings());
    for &s in &signals {
        for b in 0..ds.num_buildings() {
            values.push(next_prev(signal(ds, b, s), ds.series(b, target), &period)?);
        }
    }
    Ok(CorrTable {
        rows: signals.iter().map(|s| format!("prev_{s}")).collect(),
        cols: ds.buildings().iter().map(|m| format!("building_{}", m.id)).collect(),
        values,
    })
}

/// One building's previous-day signals against each next-day vector.
pub fn building_correlation_table(
    ds: &MultiEnergyDataset,
    building: usize,
    period: Range<usize>,
) -> Result<CorrTable, FeatselError> {
    check_period(ds, &period)?;
    if building >= ds.num_buildings() {
        return Err(FeatselError::Invalid(format!("no building at index {building}")));
    }
    let signals = candidate_signals(ds);
    let mut values = Vec::new();
    for &s in &signals {
        for v in EnergyVector::ALL {
            values.push(next_prev(signal(ds, building, s), ds.series(building, v), &period)?);
        }
    }
    Ok(CorrTable {
        rows: signals.iter().map(|s| format!("prev_{s}")).collect(),
        cols: EnergyVector::ALL.iter().map(|v| format!("next_{v}")).collect(),
        values,
    })
}

/// Symmetric matrix of same-time correlations between every pair of
/// buildings with a non-zero `vector` series.
pub fn cross_building_correlation(
    ds: &MultiEnergyDataset,
    vector: EnergyVector,
    period: Range<usize>,
) -> Result<CorrTable, FeatselError> {
    check_period(ds, &period)?;
    let active = ds.nonzero_buildings(vector);
    if active.is_empty() {
        return Err(FeatselError::Invalid(format!("no building has a non-zero {vector} series")));
    }
    let n = active.len();
    let mut values = vec![None; n * n];
    let d = SAMPLES_PER_DAY;
    for i in 0..n {
        let x = &ds.series(active[i], vector)[period.clone()];
        values[i * n + i] = sliding_mean_correlation(x, x, d, d)?;
        for j in i + 1..n {
            let y = &ds.series(active[j], vector)[period.clone()];
            let r = sliding_mean_correlation(x, y, d, d)?;
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    let labels: Vec<String> = active.iter().map(|&b| format!("building_{}", ds.building(b).id)).collect();
    Ok(CorrTable {
        rows: labels.clone(),
        cols: labels,
        values,
    })
}

/// Settings of the channel selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionRule {
    pub threshold: f64,
    pub temperature: bool,
    pub solar: bool,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            temperature: false,
            solar: false,
        }
    }
}

/// Input channels for predicting `target` at one building, given its
/// [`building_correlation_table`]. The same-type channel always comes first;
/// another vector follows only if the building couples it to the target and
/// its correlation with the target reaches the threshold. Exogenous
/// channels are appended when the rule asks for them.
pub fn select_input_channels(
    corr: &CorrTable,
    meta: &BuildingMeta,
    target: EnergyVector,
    rule: &SelectionRule,
) -> Result<Vec<InputChannel>, FeatselError> {
    let col = format!("next_{target}");
    let lookup = |c: InputChannel| corr.find(&format!("prev_{c}"), &col);
    let same = InputChannel::Energy(target);
    match lookup(same) {
        Some(Some(_)) => {}
        _ => return Err(FeatselError::UndefinedCorrelation(target.to_string())),
    }
    let mut out = vec![same];
    for v in EnergyVector::ALL {
        if v == target || !meta.links(target, v) {
            continue;
        }
        if let Some(Some(r)) = lookup(InputChannel::Energy(v)) {
            if r >= rule.threshold {
                out.push(InputChannel::Energy(v));
            }
        }
    }
    if rule.temperature {
        out.push(InputChannel::Temperature);
    }
    if rule.solar {
        out.push(InputChannel::Solar);
    }
    Ok(out)
}
