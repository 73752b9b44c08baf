use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mecnn::arch::FrameworkId;
use mecnn::data::{split_ranges, write_csv, write_meta_csv, EnergyVector};
use mecnn::featsel::{building_correlation_table, cross_building_correlation, next_prev_correlation_matrix};
use mecnn::metrics::{per_day, MetricReport};
use mecnn_cli::config::{DataSource, ExperimentConfig};
use mecnn_cli::experiment::{epoch_sweep, run_experiment, write_sweep};
use mecnn_cli::report::emit_plot_data;
use mecnn_cli::CliError;

#[derive(Parser)]
#[command(name = "mecnn", version, about = "Next-half-hour multi-energy demand forecasting with CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Synth(Common),
    /// Write previous-day/next-day and cross-building correlation tables.
    Correlate(Common),
    /// Train the configured frameworks and write the result bundle.
    Train(Common),
    /// Score prediction CSV files (timestamp,actual,predicted).
    Evaluate {
        files: Vec<PathBuf>,
        /// Also print one line per day.
        #[arg(long)]
        daily: bool,
    },
    /// Retrain for each epoch budget and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated epoch budgets.
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
    },
    /// Federated training (CNN_6) with the configured topology.
    Fed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nodes: Option<usize>,
        /// Averaging period in iterations; 0 disables averaging.
        #[arg(long)]
        sync_period: Option<usize>,
    },
    /// Turn a run directory into plot-ready CSV files.
    Report {
        /// Run directory; defaults to the configured output directory.
        dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Options shared by the verbs that read a config. Flags override the file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Seed for initialisation and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Frameworks to run, e.g. CNN_1,CNN_5.
    #[arg(long, value_delimiter = ',')]
    frameworks: Vec<FrameworkId>,
    #[arg(long, value_delimiter = ',')]
    vectors: Vec<EnergyVector>,
    /// Building ids to model.
    #[arg(long, value_delimiter = ',')]
    buildings: Vec<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Read data from this CSV instead of the configured source.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic data seed.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Synthetic data length in days.
    #[arg(long)]
    days: Option<usize>,
    /// Do not write model JSON files.
    #[arg(long)]
    no_models: bool,
}

impl Common {
    /// Loads the config (or defaults) and applies flag overrides. Returns the
    /// config and the directory relative data paths resolve against.
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let (mut cfg, base) = match &self.config {
            Some(p) => (
                ExperimentConfig::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (ExperimentConfig::default(), PathBuf::from(".")),
        };
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        } else if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.frameworks.is_empty() {
            cfg.frameworks = self.frameworks.clone();
        }
        if !self.vectors.is_empty() {
            cfg.vectors = self.vectors.clone();
        }
        if !self.buildings.is_empty() {
            cfg.buildings = Some(self.buildings.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if self.no_models {
            cfg.save_models = false;
        }
        if let Some(path) = &self.data {
            let path = std::env::current_dir().map_err(|e| CliError::Config(e.to_string()))?.join(path);
            cfg.data = DataSource::Csv { path, meta: None };
        }
        if self.data_seed.is_some() || self.days.is_some() {
            match &mut cfg.data {
                DataSource::Synth { seed, synth } => {
                    if let Some(s) = self.data_seed {
                        *seed = s;
                    }
                    if let Some(d) = self.days {
                        synth.num_days = d;
                    }
                }
                DataSource::Csv { .. } => {
                    return Err(CliError::Config("--data-seed/--days apply to synthetic data only".into()));
                }
            }
        }
        Ok((cfg, base))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn synth(common: &Common) -> Result<(), CliError> {
    let (cfg, base) = common.resolve()?;
    let ds = cfg.data.load(&base)?;
    create_dir(&cfg.output_dir)?;
    let data = cfg.output_dir.join("data.csv");
    let meta = cfg.output_dir.join("meta.csv");
    write_csv(&ds, create_file(&data)?).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_meta_csv(ds.buildings(), create_file(&meta)?).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{} ({} buildings, {} days)", data.display(), ds.num_buildings(), ds.days());
    println!("{}", meta.display());
    Ok(())
}

fn correlate(common: &Common) -> Result<(), CliError> {
    let (cfg, base) = common.resolve()?;
    let ds = cfg.data.load(&base)?;
    let ranges = split_ranges(&ds, cfg.split).map_err(|e| CliError::Config(e.to_string()))?;
    let period = 0..ranges.train.end;
    let dir = cfg.output_dir.join("correlation");
    create_dir(&dir)?;
    let rt = |e: &dyn std::fmt::Display| CliError::Runtime(e.to_string());
    for v in &cfg.vectors {
        let m = next_prev_correlation_matrix(&ds, *v, period.clone()).map_err(|e| rt(&e))?;
        m.write_long_csv(create_file(&dir.join(format!("next_prev_{v}.csv")))?)
            .map_err(|e| rt(&e))?;
        match cross_building_correlation(&ds, *v, period.clone()) {
            Ok(c) => {
                c.write_long_csv(create_file(&dir.join(format!("cross_building_{v}.csv")))?)
                    .map_err(|e| rt(&e))?;
                let mean = mecnn::metrics::format_metric(c.off_diagonal_mean());
                println!("{v}: off-diagonal mean correlation {mean}");
            }
            Err(e) => eprintln!("{v}: {e}"),
        }
    }
    for b in cfg.building_indices(&ds) {
        let t = building_correlation_table(&ds, b, period.clone()).map_err(|e| rt(&e))?;
        let id = ds.building(b).id;
        t.write_long_csv(create_file(&dir.join(format!("building_{id}.csv")))?)
            .map_err(|e| rt(&e))?;
    }
    println!("{}", dir.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig, base: &Path) -> Result<(), CliError> {
    let summary = run_experiment(cfg, base)?;
    for (fw, v, split, rep) in &summary.results {
        let flag = if rep.acceptable() { "" } else { "  (below threshold)" };
        let nrmse = rep.nrmse.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        println!(
            "{fw} {v:<8} {:<10} snr {:>7.2} dB  nrmse {nrmse:>7}{flag}",
            split.name(),
            rep.snr_db,
        );
    }
    println!("{}", summary.output_dir.display());
    Ok(())
}

fn evaluate(files: &[PathBuf], daily: bool) -> Result<(), CliError> {
    if files.is_empty() {
        return Err(CliError::Config("no prediction files given".into()));
    }
    for path in files {
        let cfg_err = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(|e| cfg_err(&e))?;
        let (mut actual, mut predicted) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| cfg_err(&e))?;
            let num = |i: usize| rec.get(i).unwrap_or("").trim().parse::<f64>().map_err(|e| cfg_err(&e));
            actual.push(num(1)?);
            predicted.push(num(2)?);
        }
        let rep = MetricReport::compute(&actual, &predicted).map_err(|e| cfg_err(&e))?;
        let json = serde_json::to_string(&rep).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("{}: {json}", path.display());
        if daily {
            let days = per_day(&actual, &predicted).map_err(|e| cfg_err(&e))?;
            for (d, rep) in days.iter().enumerate() {
                let json = serde_json::to_string(rep).map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("  day {}: {json}", d + 1);
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => synth(&c),
        Command::Correlate(c) => correlate(&c),
        Command::Train(c) => {
            let (cfg, base) = c.resolve()?;
            train(&cfg, &base)
        }
        Command::Evaluate { files, daily } => evaluate(&files, daily),
        Command::Sweep { common, budgets } => {
            let (cfg, base) = common.resolve()?;
            let ds = cfg.data.load(&base)?;
            let rows = epoch_sweep(&cfg, &ds, &budgets)?;
            create_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("sweep.csv");
            write_sweep(&rows, create_file(&path)?)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Fed {
            common,
            nodes,
            sync_period,
        } => {
            let (mut cfg, base) = common.resolve()?;
            cfg.frameworks = vec![FrameworkId::Cnn6];
            if let Some(n) = nodes {
                cfg.fed.num_nodes = n;
            }
            if let Some(p) = sync_period {
                cfg.fed.sync_period = (p > 0).then_some(p);
            }
            train(&cfg, &base)
        }
        Command::Report { dir, config } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => Common {
                    config: Some(c),
                    ..Common::default()
                }
                .resolve()?
                .0
                .output_dir,
                (None, None) => ExperimentConfig::default().output_dir,
            };
            for f in emit_plot_data(&dir)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mecnn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
