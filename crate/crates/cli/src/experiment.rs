//! Running frameworks over a dataset and writing the result bundle.

use std::fs;
use std::path::{Path, PathBuf};

use mecnn::arch::FrameworkId;
use mecnn::data::{split_ranges, EnergyVector, InputChannel, MultiEnergyDataset};
use mecnn::featsel::{building_correlation_table, select_input_channels, FeatselError};
use mecnn::fed::{write_round_log, FedConfig, RoundRecord};
use mecnn::forecast::{fit_federated, fit_multi, fit_single, Forecast, ModelSetup, SplitPredictions};
use mecnn::metrics::{format_metric, mean_of_daily, network_total, per_day, MetricReport};
use mecnn::nn::Network;
use mecnn::optim::TrainHistory;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Actual and predicted values of one building over one partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPair {
    pub target_index: Vec<usize>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildingResult {
    pub building: usize,
    pub splits: Vec<(Split, SeriesPair)>,
}

/// Everything one framework produced for one energy vector.
#[derive(Clone, Debug)]
pub struct VectorResult {
    pub framework: FrameworkId,
    pub vector: EnergyVector,
    pub buildings: Vec<BuildingResult>,
    /// Buildings left out, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub models: Vec<ModelArtifact>,
    pub histories: Vec<(String, TrainHistory)>,
    pub round_log: Option<Vec<RoundRecord>>,
}

impl VectorResult {
    /// Network total (sum over the modelled buildings) for one partition.
    pub fn total(&self, split: Split) -> Option<SeriesPair> {
        let parts: Vec<&SeriesPair> = self
            .buildings
            .iter()
            .filter_map(|b| b.splits.iter().find(|(s, _)| *s == split).map(|(_, p)| p))
            .collect();
        let first = parts.first()?;
        let actual = network_total(&parts.iter().map(|p| p.actual.clone()).collect::<Vec<_>>()).ok()?;
        let predicted = network_total(&parts.iter().map(|p| p.predicted.clone()).collect::<Vec<_>>()).ok()?;
        Some(SeriesPair {
            target_index: first.target_index.clone(),
            actual,
            predicted,
        })
    }

    pub fn splits(&self) -> Vec<Split> {
        let mut s: Vec<Split> = self
            .buildings
            .first()
            .map(|b| b.splits.iter().map(|(s, _)| *s).collect())
            .unwrap_or_default();
        s.sort();
        s
    }
}

/// A saved model with what is needed to reuse it.
#[derive(Clone, Debug, Serialize)]
pub struct ModelArtifact {
    pub name: String,
    pub framework: FrameworkId,
    pub vector: Option<EnergyVector>,
    pub building_id: Option<u32>,
    pub channels: Vec<InputChannel>,
    pub network: Network,
    pub scaler: Option<mecnn::data::MinMaxScaler>,
}

fn pairs_of(forecast: &Forecast, k: usize) -> Vec<(Split, SeriesPair)> {
    let take = |p: &SplitPredictions| SeriesPair {
        target_index: p.target_index.clone(),
        actual: p.actual[k].clone(),
        predicted: p.predicted[k].clone(),
    };
    let mut out = vec![(Split::Train, take(&forecast.train))];
    if let Some(v) = &forecast.validation {
        out.push((Split::Validation, take(v)));
    }
    out.push((Split::Test, take(&forecast.test)));
    out
}

fn setup_for(cfg: &ExperimentConfig, framework: FrameworkId) -> ModelSetup {
    let mut train = cfg.train.clone();
    train.shuffle_seed = cfg.seed;
    ModelSetup {
        framework,
        arch: cfg.arch,
        train,
        init_seed: cfg.seed,
        minmax: cfg.inputs.minmax,
    }
}

/// Input channels of a single-building model, or the reason the building
/// cannot take this framework.
fn channels_for(
    cfg: &ExperimentConfig,
    ds: &MultiEnergyDataset,
    framework: FrameworkId,
    building: usize,
    vector: EnergyVector,
) -> Result<Vec<InputChannel>, String> {
    let rule = cfg.inputs.rule();
    let mut exogenous = Vec::new();
    if rule.temperature {
        exogenous.push(InputChannel::Temperature);
    }
    if rule.solar {
        exogenous.push(InputChannel::Solar);
    }
    if framework != FrameworkId::Cnn2 || ds.is_zero(building, vector) {
        let mut ch = vec![InputChannel::Energy(vector)];
        ch.extend(exogenous);
        return Ok(ch);
    }
    let ranges = split_ranges(ds, cfg.split).map_err(|e| e.to_string())?;
    let corr = building_correlation_table(ds, building, 0..ranges.train.end).map_err(|e| e.to_string())?;
    let meta = ds.building(building);
    let mut channels = match select_input_channels(&corr, meta, vector, &rule) {
        Ok(c) => c,
        Err(FeatselError::UndefinedCorrelation(c)) => return Err(format!("{c} correlation undefined")),
        Err(e) => return Err(e.to_string()),
    };
    let energy = channels
        .iter()
        .filter(|c| matches!(c, InputChannel::Energy(_)))
        .count();
    if energy < 2 {
        // no coupled vector clears the threshold: take the best coupled one
        let col = format!("next_{vector}");
        let best = EnergyVector::ALL
            .iter()
            .filter(|&&u| meta.links(vector, u) && !ds.is_zero(building, u))
            .filter_map(|&u| corr.find(&format!("prev_{u}"), &col).flatten().map(|r| (u, r)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((u, _)) => {
                let pos = channels
                    .iter()
                    .position(|c| !matches!(c, InputChannel::Energy(_)))
                    .unwrap_or(channels.len());
                channels.insert(pos, InputChannel::Energy(u));
            }
            None => return Err(format!("no coupled vector to pair with {vector}")),
        }
    }
    Ok(channels)
}

fn artifact(
    name: String,
    ds: &MultiEnergyDataset,
    f: &Forecast,
    vector: Option<EnergyVector>,
    building: Option<usize>,
) -> Option<ModelArtifact> {
    Some(ModelArtifact {
        name,
        framework: f.framework,
        vector,
        building_id: building.map(|b| ds.building(b).id),
        channels: f.channels.clone(),
        network: f.net.clone()?,
        scaler: f.scaler.clone(),
    })
}

fn run_single(
    cfg: &ExperimentConfig,
    ds: &MultiEnergyDataset,
    framework: FrameworkId,
    vector: EnergyVector,
) -> Result<VectorResult, CliError> {
    let setup = setup_for(cfg, framework);
    let indices = cfg.building_indices(ds);
    let fitted: Vec<Result<Forecast, String>> = indices
        .par_iter()
        .map(|&b| {
            let channels = channels_for(cfg, ds, framework, b, vector)?;
            fit_single(ds, b, vector, channels, cfg.split, &setup).map_err(|e| format!("!{e}"))
        })
        .collect();
    let mut result = VectorResult {
        framework,
        vector,
        buildings: Vec::new(),
        skipped: Vec::new(),
        models: Vec::new(),
        histories: Vec::new(),
        round_log: None,
    };
    for (&b, f) in indices.iter().zip(fitted) {
        let id = ds.building(b).id;
        match f {
            Ok(f) => {
                let name = format!("{framework}_{vector}_b{id}");
                if let Some(a) = artifact(name.clone(), ds, &f, Some(vector), Some(b)) {
                    result.models.push(a);
                    result.histories.push((name, f.history.clone()));
                }
                result.buildings.push(BuildingResult {
                    building: b,
                    splits: pairs_of(&f, 0),
                });
            }
            Err(msg) if msg.starts_with('!') => {
                return Err(CliError::Runtime(format!("{framework} {vector} building {id}: {}", &msg[1..])));
            }
            Err(reason) => result.skipped.push((b, reason)),
        }
    }
    Ok(result)
}

/// Splits a multi-output forecast into per-vector results, keeping the
/// configured buildings.
fn split_multi(cfg: &ExperimentConfig, ds: &MultiEnergyDataset, f: &Forecast, vectors: &[EnergyVector]) -> Vec<VectorResult> {
    let keep = cfg.building_indices(ds);
    let name_vec = if f.framework == FrameworkId::Cnn4 { None } else { vectors.first().copied() };
    let name = match name_vec {
        Some(v) => format!("{}_{v}", f.framework),
        None => f.framework.to_string(),
    };
    let model = artifact(name.clone(), ds, f, name_vec, None);
    vectors
        .iter()
        .enumerate()
        .map(|(i, &v)| VectorResult {
            framework: f.framework,
            vector: v,
            buildings: f
                .outputs
                .iter()
                .enumerate()
                .filter(|(_, (b, ov))| *ov == v && keep.contains(b))
                .map(|(k, (b, _))| BuildingResult {
                    building: *b,
                    splits: pairs_of(f, k),
                })
                .collect(),
            skipped: Vec::new(),
            models: if i == 0 { model.clone().into_iter().collect() } else { Vec::new() },
            histories: if i == 0 { vec![(name.clone(), f.history.clone())] } else { Vec::new() },
            round_log: None,
        })
        .collect()
}

/// Trains every requested framework and vector and returns the results in
/// configuration order. Nothing is written to disk.
pub fn compute(cfg: &ExperimentConfig, ds: &MultiEnergyDataset) -> Result<Vec<VectorResult>, CliError> {
    cfg.validate(ds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| {
        let mut out = Vec::new();
        for &fw in &cfg.frameworks {
            match fw {
                FrameworkId::Cnn1 | FrameworkId::Cnn2 | FrameworkId::Cnn3 => {
                    for &v in &cfg.vectors {
                        out.push(run_single(cfg, ds, fw, v)?);
                    }
                }
                FrameworkId::Cnn4 => {
                    let f = fit_multi(ds, EnergyVector::Electric, cfg.split, &setup_for(cfg, fw))
                        .map_err(|e| CliError::Runtime(format!("{fw}: {e}")))?;
                    let all = split_multi(cfg, ds, &f, &EnergyVector::ALL);
                    out.extend(all.into_iter().filter(|r| cfg.vectors.contains(&r.vector)));
                }
                FrameworkId::Cnn5 => {
                    for &v in &cfg.vectors {
                        let f = fit_multi(ds, v, cfg.split, &setup_for(cfg, fw))
                            .map_err(|e| CliError::Runtime(format!("{fw} {v}: {e}")))?;
                        out.extend(split_multi(cfg, ds, &f, &[v]));
                    }
                }
                FrameworkId::Cnn6 => {
                    for &v in &cfg.vectors {
                        out.push(run_fed(cfg, ds, v)?);
                    }
                }
            }
        }
        Ok(out)
    })
}

fn run_fed(cfg: &ExperimentConfig, ds: &MultiEnergyDataset, vector: EnergyVector) -> Result<VectorResult, CliError> {
    let fed = FedConfig {
        sync_period: cfg.fed.sync_period,
        sample_weighted: cfg.fed.sample_weighted,
    };
    let fw = FrameworkId::Cnn6;
    let f = fit_federated(ds, vector, cfg.fed.num_nodes, cfg.split, &setup_for(cfg, fw), &fed)
        .map_err(|e| CliError::Runtime(format!("{fw} {vector}: {e}")))?;
    let keep = cfg.building_indices(ds);
    let name = format!("{fw}_{vector}");
    let mut skipped: Vec<(usize, String)> = f
        .excluded
        .iter()
        .map(|&node| (f.node_buildings[node], format!("node {node} holds less than one mini-batch")))
        .collect();
    skipped.dedup();
    Ok(VectorResult {
        framework: fw,
        vector,
        buildings: f
            .per_building
            .iter()
            .filter(|p| keep.contains(&p.outputs[0].0))
            .map(|p| BuildingResult {
                building: p.outputs[0].0,
                splits: pairs_of(p, 0),
            })
            .collect(),
        skipped,
        models: vec![ModelArtifact {
            name: name.clone(),
            framework: fw,
            vector: Some(vector),
            building_id: None,
            channels: vec![InputChannel::Energy(vector)],
            network: f.global.clone(),
            scaler: None,
        }],
        histories: f
            .histories
            .iter()
            .enumerate()
            .map(|(i, h)| (format!("{name}_node{i}"), h.clone()))
            .collect(),
        round_log: Some(f.round_log),
    })
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub results: Vec<(FrameworkId, EnergyVector, Split, MetricReport)>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn path(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        self.files.push(PathBuf::from(rel));
        Ok(p)
    }

    fn csv(&mut self, rel: &str) -> Result<csv::Writer<fs::File>, CliError> {
        let p = self.path(rel)?;
        csv::Writer::from_path(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
    }

    fn bytes(&mut self, rel: &str, data: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel)?;
        fs::write(&p, data).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
    }
}

fn io<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn timestamp(ds: &MultiEnergyDataset, t: usize) -> String {
    ds.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn report_of(p: &SeriesPair) -> Result<MetricReport, CliError> {
    MetricReport::compute(&p.actual, &p.predicted).map_err(io)
}

/// Table-IV-shaped summary: one row per framework, columns per vector and
/// partition.
pub fn summary_table(results: &[(FrameworkId, EnergyVector, Split, MetricReport)]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut frameworks: Vec<FrameworkId> = results.iter().map(|r| r.0).collect();
    frameworks.dedup();
    frameworks.sort();
    frameworks.dedup();
    let mut header = vec!["framework".to_string()];
    for v in EnergyVector::ALL {
        for s in [Split::Train, Split::Test] {
            header.push(format!("{v}_{}_snr_db", s.name()));
            header.push(format!("{v}_{}_nrmse", s.name()));
        }
    }
    let rows = frameworks
        .iter()
        .map(|&fw| {
            let mut row = vec![fw.to_string()];
            for v in EnergyVector::ALL {
                for s in [Split::Train, Split::Test] {
                    let r = results.iter().find(|r| r.0 == fw && r.1 == v && r.2 == s);
                    row.push(format_metric(r.map(|r| r.3.snr_db)));
                    row.push(format_metric(r.and_then(|r| r.3.nrmse)));
                }
            }
            row
        })
        .collect();
    (header, rows)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    data: &'a crate::config::DataSource,
    skipped: Vec<SkippedEntry>,
    files: Vec<String>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct SkippedEntry {
    framework: FrameworkId,
    vector: EnergyVector,
    building_id: u32,
    reason: String,
}

/// Trains the configured frameworks and writes metrics, predictions,
/// histories, models, a summary table and a manifest under the output
/// directory.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<RunSummary, CliError> {
    let ds = cfg.data.load(base)?;
    let results = compute(cfg, &ds)?;
    write_results(cfg, &ds, &results)
}

pub fn write_results(cfg: &ExperimentConfig, ds: &MultiEnergyDataset, results: &[VectorResult]) -> Result<RunSummary, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut w = Writer {
        dir: dir.clone(),
        files: Vec::new(),
    };
    let mut summary = Vec::new();

    let mut metrics = w.csv("metrics.csv")?;
    metrics.write_record(MetricReport::CSV_HEADER).map_err(io)?;
    let mut daily = w.csv("daily_metrics.csv")?;
    daily
        .write_record(["framework", "vector", "split", "day", "snr_db", "nrmse", "mape_pct"])
        .map_err(io)?;
    let mut bmetrics = w.csv("building_metrics.csv")?;
    bmetrics
        .write_record(["framework", "vector", "building_id", "split", "snr_db", "nrmse", "mape_pct", "n_excluded"])
        .map_err(io)?;
    let mut daily_mean = w.csv("daily_mean_metrics.csv")?;
    daily_mean
        .write_record(["framework", "vector", "split", "mean_daily_snr_db", "mean_daily_nrmse"])
        .map_err(io)?;

    for r in results {
        let fw = r.framework.to_string();
        let v = r.vector.to_string();
        for b in &r.buildings {
            for (s, p) in &b.splits {
                let rep = report_of(p)?;
                let row = rep.csv_row(&fw, &v, s.name());
                bmetrics
                    .write_record([
                        row[0].as_str(),
                        row[1].as_str(),
                        &ds.building(b.building).id.to_string(),
                        row[2].as_str(),
                        row[3].as_str(),
                        row[4].as_str(),
                        row[5].as_str(),
                        row[6].as_str(),
                    ])
                    .map_err(io)?;
            }
        }
        for s in r.splits() {
            let Some(total) = r.total(s) else { continue };
            let rep = report_of(&total)?;
            metrics.write_record(rep.csv_row(&fw, &v, s.name())).map_err(io)?;
            summary.push((r.framework, r.vector, s, rep));
            let days = per_day(&total.actual, &total.predicted).map_err(io)?;
            for (d, rep) in days.iter().enumerate() {
                daily
                    .write_record([
                        fw.clone(),
                        v.clone(),
                        s.name().to_string(),
                        (d + 1).to_string(),
                        format_metric(Some(rep.snr_db)),
                        format_metric(rep.nrmse),
                        format_metric(rep.mape_pct),
                    ])
                    .map_err(io)?;
            }
            let (msnr, mnrmse) = mean_of_daily(&days);
            daily_mean
                .write_record([fw.clone(), v.clone(), s.name().to_string(), format_metric(msnr), format_metric(mnrmse)])
                .map_err(io)?;

            let mut pred = w.csv(&format!("predictions_{fw}_{v}_{}.csv", s.name()))?;
            pred.write_record(["timestamp", "actual", "predicted"]).map_err(io)?;
            for ((t, a), p) in total.target_index.iter().zip(&total.actual).zip(&total.predicted) {
                pred.write_record([timestamp(ds, *t), a.to_string(), p.to_string()])
                    .map_err(io)?;
            }
            pred.flush().map_err(io)?;
        }
        for (name, h) in &r.histories {
            let mut buf = Vec::new();
            h.write_csv(&mut buf).map_err(io)?;
            w.bytes(&format!("histories/{name}.csv"), &buf)?;
        }
        for m in r.models.iter().filter(|_| cfg.save_models) {
            let json = serde_json::to_vec(m).map_err(io)?;
            w.bytes(&format!("models/{}.json", m.name), &json)?;
        }
        if let Some(log) = &r.round_log {
            let mut buf = Vec::new();
            write_round_log(log, &mut buf).map_err(io)?;
            w.bytes(&format!("fed_rounds_{v}.csv"), &buf)?;
        }
    }
    metrics.flush().map_err(io)?;
    daily.flush().map_err(io)?;
    bmetrics.flush().map_err(io)?;
    daily_mean.flush().map_err(io)?;

    let (header, rows) = summary_table(&summary);
    let mut sum = w.csv("summary.csv")?;
    sum.write_record(&header).map_err(io)?;
    for row in &rows {
        sum.write_record(row).map_err(io)?;
    }
    sum.flush().map_err(io)?;

    let skipped = results
        .iter()
        .flat_map(|r| {
            r.skipped.iter().map(move |(b, reason)| SkippedEntry {
                framework: r.framework,
                vector: r.vector,
                building_id: ds.building(*b).id,
                reason: reason.clone(),
            })
        })
        .collect();
    let mut files: Vec<String> = w.files.iter().map(|p| p.display().to_string()).collect();
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: "mecnn",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        data: &cfg.data,
        skipped,
        files,
        config: cfg,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(io)?;
    w.bytes("manifest.json", &json)?;

    Ok(RunSummary {
        output_dir: dir,
        files: w.files,
        results: summary,
    })
}

/// One row of an epoch sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub epochs: usize,
    pub framework: FrameworkId,
    pub vector: EnergyVector,
    pub train: MetricReport,
    pub test: MetricReport,
    /// Mean squared error of the training-period network total.
    pub train_mse: f64,
}

/// Retrains from the same seed for each epoch budget and records network
/// total metrics per budget.
pub fn epoch_sweep(cfg: &ExperimentConfig, ds: &MultiEnergyDataset, budgets: &[usize]) -> Result<Vec<SweepRow>, CliError> {
    if budgets.is_empty() {
        return Err(CliError::Config("epoch list is empty".into()));
    }
    let mut rows = Vec::new();
    for &epochs in budgets {
        let mut c = cfg.clone();
        c.train.max_epochs = epochs;
        for r in compute(&c, ds)? {
            let (Some(tr), Some(te)) = (r.total(Split::Train), r.total(Split::Test)) else {
                continue;
            };
            let train_mse =
                tr.actual.iter().zip(&tr.predicted).map(|(a, p)| (a - p) * (a - p)).sum::<f64>() / tr.actual.len() as f64;
            rows.push(SweepRow {
                epochs,
                framework: r.framework,
                vector: r.vector,
                train: report_of(&tr)?,
                test: report_of(&te)?,
                train_mse,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep<W: std::io::Write>(rows: &[SweepRow], writer: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "epochs",
        "framework",
        "vector",
        "train_snr_db",
        "train_nrmse",
        "test_snr_db",
        "test_nrmse",
        "train_mse",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.epochs.to_string(),
            r.framework.to_string(),
            r.vector.to_string(),
            format_metric(Some(r.train.snr_db)),
            format_metric(r.train.nrmse),
            format_metric(Some(r.test.snr_db)),
            format_metric(r.test.nrmse),
            r.train_mse.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}
