//! Experiment configuration files.

use std::path::{Path, PathBuf};

use mecnn::arch::FrameworkId;
use mecnn::data::{load_csv, load_meta_csv, synth_generate, EnergyVector, MultiEnergyDataset, SplitSpec, SynthConfig};
use mecnn::featsel::SelectionRule;
use mecnn::forecast::ArchOverride;
use mecnn::optim::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        synth: SynthConfig,
    },
    Csv {
        path: PathBuf,
        /// Optional building metadata (`building_id,electric_node,...`).
        #[serde(default)]
        meta: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth {
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

impl DataSource {
    /// Loads or generates the dataset. Relative paths resolve against
    /// `base`.
    pub fn load(&self, base: &Path) -> Result<MultiEnergyDataset, CliError> {
        match self {
            DataSource::Synth { seed, synth } => {
                synth_generate(synth, *seed).map_err(|e| CliError::Config(format!("synthetic data: {e}")))
            }
            DataSource::Csv { path, meta } => {
                let path = base.join(path);
                let mut ds = load_csv(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                if let Some(m) = meta {
                    let mp = base.join(m);
                    let file = std::fs::File::open(&mp).map_err(|e| CliError::Config(format!("{}: {e}", mp.display())))?;
                    let meta = load_meta_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", mp.display())))?;
                    ds.set_meta(meta).map_err(|e| CliError::Config(format!("{}: {e}", mp.display())))?;
                }
                Ok(ds)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputOptions {
    /// Correlation threshold for extra energy channels (CNN_2).
    pub threshold: f64,
    /// Append the previous day's temperature as an input column.
    pub temperature: bool,
    /// Append the previous day's solar radiance as an input column.
    pub solar: bool,
    /// Scale inputs to [0, 1] with training-split statistics.
    pub minmax: bool,
}

impl Default for InputOptions {
    fn default() -> Self {
        Self {
            threshold: SelectionRule::default().threshold,
            temperature: false,
            solar: false,
            minmax: false,
        }
    }
}

impl InputOptions {
    pub fn rule(&self) -> SelectionRule {
        SelectionRule {
            threshold: self.threshold,
            temperature: self.temperature,
            solar: self.solar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedOptions {
    pub num_nodes: usize,
    pub sync_period: Option<usize>,
    pub sample_weighted: bool,
}

impl Default for FedOptions {
    fn default() -> Self {
        Self {
            num_nodes: 20,
            sync_period: Some(1),
            sample_weighted: false,
        }
    }
}

fn default_frameworks() -> Vec<FrameworkId> {
    vec![FrameworkId::Cnn1]
}

fn default_vectors() -> Vec<EnergyVector> {
    EnergyVector::ALL.to_vec()
}

fn default_split() -> SplitSpec {
    SplitSpec::train_test()
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/experiment")
}

/// One experiment: a dataset, the frameworks to run on it, and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Seeds network initialisation and mini-batch shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frameworks")]
    pub frameworks: Vec<FrameworkId>,
    #[serde(default = "default_vectors")]
    pub vectors: Vec<EnergyVector>,
    /// Building ids to model; all buildings when absent.
    #[serde(default)]
    pub buildings: Option<Vec<u32>>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ArchOverride,
    #[serde(default)]
    pub inputs: InputOptions,
    #[serde(default)]
    pub fed: FedOptions,
    /// Worker threads for per-building training; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    /// Write trained networks as JSON under `models/`.
    #[serde(default = "default_true")]
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output(),
            seed: 0,
            frameworks: default_frameworks(),
            vectors: default_vectors(),
            buildings: None,
            data: DataSource::default(),
            split: default_split(),
            train: TrainConfig::default(),
            arch: ArchOverride::default(),
            inputs: InputOptions::default(),
            fed: FedOptions::default(),
            threads: 0,
            save_models: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self, ds: &MultiEnergyDataset) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.frameworks.is_empty() {
            return bad("no frameworks requested".into());
        }
        if self.vectors.is_empty() {
            return bad("no energy vectors requested".into());
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let exogenous = self.inputs.temperature || self.inputs.solar;
        if self.inputs.temperature && ds.temperature().is_none() {
            return bad("inputs.temperature is set but the dataset has no temperature series".into());
        }
        if self.inputs.solar && ds.solar().is_none() {
            return bad("inputs.solar is set but the dataset has no solar series".into());
        }
        for &fw in &self.frameworks {
            match fw {
                FrameworkId::Cnn4 | FrameworkId::Cnn5 | FrameworkId::Cnn6 if exogenous => {
                    return bad(format!("{fw} does not take exogenous inputs; unset inputs.temperature/solar"));
                }
                FrameworkId::Cnn6 if self.inputs.minmax => {
                    return bad("CNN_6 does not support inputs.minmax".into());
                }
                FrameworkId::Cnn6 if self.fed.num_nodes == 0 => {
                    return bad("fed.num_nodes must be at least 1".into());
                }
                FrameworkId::Cnn6 if self.fed.sync_period == Some(0) => {
                    return bad("fed.sync_period must be positive (omit it to disable averaging)".into());
                }
                FrameworkId::Cnn3 if self.split.mode != mecnn::data::SplitMode::TrainValTest => {
                    return bad("CNN_3 monitors a validation set; use split.mode = \"train_val_test\"".into());
                }
                _ => {}
            }
        }
        if let Some(ids) = &self.buildings {
            if ids.is_empty() {
                return bad("buildings list is empty".into());
            }
            for id in ids {
                let Some(b) = ds.building_index(*id) else {
                    return bad(format!("building {id} is not in the dataset"));
                };
                if self.frameworks.contains(&FrameworkId::Cnn2) {
                    for &v in &self.vectors {
                        let meta = ds.building(b);
                        let coupled = EnergyVector::ALL
                            .iter()
                            .any(|&u| meta.links(v, u) && !ds.is_zero(b, u));
                        if !coupled && !ds.is_zero(b, v) {
                            return bad(format!(
                                "CNN_2 needs a coupled building, but building {id} has no {v} coupling"
                            ));
                        }
                    }
                }
            }
        }
        mecnn::data::split_ranges(ds, self.split).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Indices of the buildings to model.
    pub fn building_indices(&self, ds: &MultiEnergyDataset) -> Vec<usize> {
        match &self.buildings {
            Some(ids) => ids.iter().filter_map(|&id| ds.building_index(id)).collect(),
            None => (0..ds.num_buildings()).collect(),
        }
    }
}
