//! Fitting and evaluating one framework on a dataset: windows, scaling,
//! training and de-windowed predictions for every partition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, ConvStack, FrameworkId};
use crate::data::{
    assemble_input, split_ranges, DataError, EnergyVector, InputChannel, InputLayout, MinMaxScaler,
    MultiEnergyDataset, SplitSpec, WindowSet,
};
use crate::fed::{assign_nodes, federated_train, FedConfig, FedError, RoundRecord};
use crate::nn::{Network, NnError};
use crate::optim::{train, OptimError, Snapshot, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Invalid(String),
}

/// Optional changes to a framework's reference architecture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOverride {
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    pub blocks: Option<usize>,
}

impl ArchOverride {
    pub fn apply(&self, mut stack: ConvStack) -> ConvStack {
        if let Some(f) = self.filters {
            stack = stack.with_filters(f);
        }
        if let Some(k) = self.kernel {
            stack = stack.with_kernel(k);
        }
        if let Some(b) = self.blocks {
            stack = stack.with_blocks(b);
        }
        stack
    }
}

/// How to build and train a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSetup {
    pub framework: FrameworkId,
    pub arch: ArchOverride,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Scale inputs to [0, 1] with statistics of the training windows.
    pub minmax: bool,
}

impl ModelSetup {
    pub fn new(framework: FrameworkId, train: TrainConfig) -> Self {
        Self {
            framework,
            arch: ArchOverride::default(),
            train,
            init_seed: 0,
            minmax: false,
        }
    }
}

/// Reference architecture of a framework for a given input layout.
pub fn stack_for(framework: FrameworkId, layout: &InputLayout, num_buildings: usize) -> Result<ConvStack, ArchError> {
    Ok(match (framework, layout) {
        (FrameworkId::Cnn4, _) => ConvStack::cnn4(num_buildings),
        (FrameworkId::Cnn5, _) => ConvStack::cnn5(num_buildings),
        (FrameworkId::Cnn2, InputLayout::SingleBuilding { channels, .. }) => {
            let mut s = ConvStack::cnn2(channels.len().clamp(2, 3))?;
            s.input.1 = channels.len();
            s
        }
        (FrameworkId::Cnn6, InputLayout::SingleBuilding { channels, .. }) if channels.len() > 1 => {
            let mut s = ConvStack::cnn1_with_inputs(channels.len());
            s.blocks = ConvStack::cnn6_local().blocks;
            s
        }
        (FrameworkId::Cnn6, _) => ConvStack::cnn6_local(),
        (_, InputLayout::SingleBuilding { channels, .. }) => ConvStack::cnn1_with_inputs(channels.len()),
        (_, _) => ConvStack::cnn1(),
    })
}

/// Actual and predicted values of one partition, one series per output.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPredictions {
    pub target_index: Vec<usize>,
    pub actual: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
}

impl SplitPredictions {
    fn from_windows(set: &WindowSet, flat_pred: &[f64]) -> Self {
        let k = set.outputs;
        let column = |src: &[f64], j: usize| (0..set.len()).map(|i| src[i * k + j]).collect();
        Self {
            target_index: set.target_index.clone(),
            actual: (0..k).map(|j| column(&set.targets, j)).collect(),
            predicted: (0..k).map(|j| column(flat_pred, j)).collect(),
        }
    }

    fn zeros(ds: &MultiEnergyDataset, building: usize, vector: EnergyVector, range: std::ops::Range<usize>) -> Self {
        let n = range.len();
        Self {
            actual: vec![ds.series(building, vector)[range.clone()].to_vec()],
            predicted: vec![vec![0.0; n]],
            target_index: range.collect(),
        }
    }
}

/// A fitted model and its predictions on every partition. Output `k`
/// forecasts `outputs[k] = (building index, vector)`.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub framework: FrameworkId,
    pub outputs: Vec<(usize, EnergyVector)>,
    pub channels: Vec<InputChannel>,
    /// `None` for a zero-consumption building, which is predicted as 0.
    pub net: Option<Network>,
    pub scaler: Option<MinMaxScaler>,
    pub history: TrainHistory,
    pub best: Option<Snapshot>,
    pub train: SplitPredictions,
    pub validation: Option<SplitPredictions>,
    pub test: SplitPredictions,
}

struct Windows {
    train: WindowSet,
    validation: Option<WindowSet>,
    test: WindowSet,
    scaler: Option<MinMaxScaler>,
}

fn windows(ds: &MultiEnergyDataset, layout: &InputLayout, split: SplitSpec, minmax: bool) -> Result<Windows, ForecastError> {
    let ranges = split_ranges(ds, split)?;
    let mut train = assemble_input(ds, layout, ranges.train)?;
    let mut validation = ranges.validation.map(|r| assemble_input(ds, layout, r)).transpose()?;
    let mut test = assemble_input(ds, layout, ranges.test)?;
    let scaler = minmax.then(|| MinMaxScaler::fit(&train));
    if let Some(s) = &scaler {
        s.apply(&mut train)?;
        if let Some(v) = validation.as_mut() {
            s.apply(v)?;
        }
        s.apply(&mut test)?;
    }
    Ok(Windows {
        train,
        validation,
        test,
        scaler,
    })
}

fn predict(net: &Network, set: &WindowSet) -> Result<SplitPredictions, ForecastError> {
    Ok(SplitPredictions::from_windows(set, &net.predict_all(&set.inputs, 512)?))
}

/// Fits a single-building framework (CNN_1, CNN_2 or CNN_3). CNN_3 uses
/// the validation partition for monitoring; the final network is reported.
pub fn fit_single(
    ds: &MultiEnergyDataset,
    building: usize,
    vector: EnergyVector,
    channels: Vec<InputChannel>,
    split: SplitSpec,
    setup: &ModelSetup,
) -> Result<Forecast, ForecastError> {
    if !matches!(setup.framework, FrameworkId::Cnn1 | FrameworkId::Cnn2 | FrameworkId::Cnn3) {
        return Err(ForecastError::Invalid(format!(
            "{} is not a single-building framework",
            setup.framework
        )));
    }
    if building >= ds.num_buildings() {
        return Err(ForecastError::Invalid(format!("no building at index {building}")));
    }
    if ds.is_zero(building, vector) {
        let ranges = split_ranges(ds, split)?;
        return Ok(Forecast {
            framework: setup.framework,
            outputs: vec![(building, vector)],
            channels,
            net: None,
            scaler: None,
            history: TrainHistory::default(),
            best: None,
            train: SplitPredictions::zeros(ds, building, vector, ranges.train),
            validation: ranges
                .validation
                .map(|r| SplitPredictions::zeros(ds, building, vector, r)),
            test: SplitPredictions::zeros(ds, building, vector, ranges.test),
        });
    }
    let layout = InputLayout::for_framework(setup.framework, building, vector, channels.clone())?;
    let w = windows(ds, &layout, split, setup.minmax)?;
    let spec = setup
        .arch
        .apply(stack_for(setup.framework, &layout, ds.num_buildings())?)
        .build()?;
    let mut net = Network::new(spec, setup.init_seed);
    let monitor = match setup.framework {
        FrameworkId::Cnn3 => w.validation.as_ref(),
        _ => None,
    };
    let outcome = train(&mut net, &w.train, monitor, &setup.train)?;
    Ok(Forecast {
        framework: setup.framework,
        outputs: vec![(building, vector)],
        channels,
        train: predict(&net, &w.train)?,
        validation: w.validation.as_ref().map(|v| predict(&net, v)).transpose()?,
        test: predict(&net, &w.test)?,
        net: Some(net),
        scaler: w.scaler,
        history: outcome.history,
        best: outcome.best,
    })
}

/// Fits a multi-building framework: CNN_4 (every vector, `vector` is
/// ignored) or CNN_5 (one vector). Outputs of zero-consumption buildings
/// are replaced by 0.
pub fn fit_multi(
    ds: &MultiEnergyDataset,
    vector: EnergyVector,
    split: SplitSpec,
    setup: &ModelSetup,
) -> Result<Forecast, ForecastError> {
    let (layout, outputs): (InputLayout, Vec<(usize, EnergyVector)>) = match setup.framework {
        FrameworkId::Cnn4 => (
            InputLayout::Joint,
            EnergyVector::ALL
                .iter()
                .flat_map(|&v| (0..ds.num_buildings()).map(move |b| (b, v)))
                .collect(),
        ),
        FrameworkId::Cnn5 => (
            InputLayout::AllBuildings(vector),
            (0..ds.num_buildings()).map(|b| (b, vector)).collect(),
        ),
        other => {
            return Err(ForecastError::Invalid(format!("{other} is not a multi-building framework")));
        }
    };
    let w = windows(ds, &layout, split, setup.minmax)?;
    let spec = setup
        .arch
        .apply(stack_for(setup.framework, &layout, ds.num_buildings())?)
        .build()?;
    let mut net = Network::new(spec, setup.init_seed);
    let outcome = train(&mut net, &w.train, None, &setup.train)?;
    let zero_out = |mut p: SplitPredictions| {
        for (k, &(b, v)) in outputs.iter().enumerate() {
            if ds.is_zero(b, v) {
                p.predicted[k].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        p
    };
    let channels = match setup.framework {
        FrameworkId::Cnn4 => EnergyVector::ALL.iter().map(|&v| InputChannel::Energy(v)).collect(),
        _ => vec![InputChannel::Energy(vector)],
    };
    Ok(Forecast {
        framework: setup.framework,
        channels,
        train: zero_out(predict(&net, &w.train)?),
        validation: w.validation.as_ref().map(|v| predict(&net, v).map(zero_out)).transpose()?,
        test: zero_out(predict(&net, &w.test)?),
        outputs,
        net: Some(net),
        scaler: w.scaler,
        history: outcome.history,
        best: outcome.best,
    })
}

/// Result of federated training for one vector.
#[derive(Clone, Debug)]
pub struct FedForecast {
    /// Per non-zero building, predictions of the global model.
    pub per_building: Vec<Forecast>,
    pub global: Network,
    /// Building index trained on by each node.
    pub node_buildings: Vec<usize>,
    pub histories: Vec<TrainHistory>,
    pub round_log: Vec<RoundRecord>,
    pub excluded: Vec<usize>,
}

/// CNN_6: one node per building (round-robin over the non-zero buildings),
/// each holding that building's training windows. The global model then
/// forecasts every building, zero-consumption ones as 0.
pub fn fit_federated(
    ds: &MultiEnergyDataset,
    vector: EnergyVector,
    num_nodes: usize,
    split: SplitSpec,
    setup: &ModelSetup,
    fed: &FedConfig,
) -> Result<FedForecast, ForecastError> {
    if setup.minmax {
        return Err(ForecastError::Invalid(
            "min-max scaling is not available for federated training".into(),
        ));
    }
    let node_buildings = assign_nodes(ds, vector, num_nodes);
    if node_buildings.is_empty() {
        return Err(ForecastError::Invalid(format!("no building has a non-zero {vector} series")));
    }
    let channels = vec![InputChannel::Energy(vector)];
    let layout_of = |b: usize| InputLayout::SingleBuilding {
        building: b,
        target: vector,
        channels: channels.clone(),
    };
    let ranges = split_ranges(ds, split)?;
    let nodes = node_buildings
        .iter()
        .map(|&b| assemble_input(ds, &layout_of(b), ranges.train.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = setup
        .arch
        .apply(stack_for(FrameworkId::Cnn6, &layout_of(node_buildings[0]), ds.num_buildings())?)
        .build()?;
    let out = federated_train(&spec, setup.init_seed, &nodes, &setup.train, fed)?;
    let mut per_building = Vec::with_capacity(ds.num_buildings());
    for b in 0..ds.num_buildings() {
        if ds.is_zero(b, vector) {
            per_building.push(Forecast {
                framework: FrameworkId::Cnn6,
                outputs: vec![(b, vector)],
                channels: channels.clone(),
                net: None,
                scaler: None,
                history: TrainHistory::default(),
                best: None,
                train: SplitPredictions::zeros(ds, b, vector, ranges.train.clone()),
                validation: ranges
                    .validation
                    .clone()
                    .map(|r| SplitPredictions::zeros(ds, b, vector, r)),
                test: SplitPredictions::zeros(ds, b, vector, ranges.test.clone()),
            });
            continue;
        }
        let layout = layout_of(b);
        let eval = |r: std::ops::Range<usize>| -> Result<SplitPredictions, ForecastError> {
            predict(&out.global, &assemble_input(ds, &layout, r)?)
        };
        per_building.push(Forecast {
            framework: FrameworkId::Cnn6,
            outputs: vec![(b, vector)],
            channels: channels.clone(),
            net: None,
            scaler: None,
            history: node_buildings
                .iter()
                .position(|&nb| nb == b)
                .map(|i| out.histories[i].clone())
                .unwrap_or_default(),
            best: None,
            train: eval(ranges.train.clone())?,
            validation: ranges.validation.clone().map(eval).transpose()?,
            test: eval(ranges.test.clone())?,
        });
    }
    Ok(FedForecast {
        per_building,
        global: out.global,
        node_buildings,
        histories: out.histories,
        round_log: out.round_log,
        excluded: out.excluded,
    })
}
