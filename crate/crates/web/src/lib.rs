//! WebAssembly bindings behind `www/index.html`. Every export takes plain
//! numbers and returns a JSON string so the page needs no glue beyond
//! `JSON.parse`.

use mecnn::arch::FrameworkId;
use mecnn::data::{synth_generate, EnergyVector, InputChannel, MultiEnergyDataset, SplitSpec, SynthConfig};
use mecnn::featsel::cross_building_correlation;
use mecnn::forecast::{fit_single, ArchOverride, ModelSetup};
use mecnn::metrics::MetricReport;
use mecnn::optim::TrainConfig;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest synthetic horizon the page may ask for.
pub const MAX_DAYS: usize = 120;

fn dataset(seed: u64, days: usize) -> Result<MultiEnergyDataset, String> {
    if !(3..=MAX_DAYS).contains(&days) {
        return Err(format!("days must be between 3 and {MAX_DAYS}"));
    }
    let cfg = SynthConfig {
        num_days: days,
        num_buildings: 12,
        zero_electric: 2,
        zero_heat: 2,
        zero_gas: 5,
        low_gas: 1,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, seed).map_err(|e| e.to_string())
}

fn vector(name: &str) -> Result<EnergyVector, String> {
    name.parse().map_err(|_| format!("unknown energy vector {name:?}"))
}

fn building_index(ds: &MultiEnergyDataset, building: usize) -> Result<usize, String> {
    if building < ds.num_buildings() {
        Ok(building)
    } else {
        Err(format!("building must be below {}", ds.num_buildings()))
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SeriesView<'a> {
    building: u32,
    electric: &'a [f64],
    heat: &'a [f64],
    gas: &'a [f64],
    temperature: Option<&'a [f64]>,
}

pub fn synth_json(seed: u64, days: usize, building: usize) -> Result<String, String> {
    let ds = dataset(seed, days)?;
    let b = building_index(&ds, building)?;
    to_json(&SeriesView {
        building: ds.building(b).id,
        electric: ds.series(b, EnergyVector::Electric),
        heat: ds.series(b, EnergyVector::Heat),
        gas: ds.series(b, EnergyVector::Gas),
        temperature: ds.temperature(),
    })
}

/// Cross-building correlation of one vector over the whole series.
pub fn correlation_json(seed: u64, days: usize, vector_name: &str) -> Result<String, String> {
    let ds = dataset(seed, days)?;
    let table = cross_building_correlation(&ds, vector(vector_name)?, 0..ds.len()).map_err(|e| e.to_string())?;
    to_json(&table)
}

#[derive(Serialize)]
struct ForecastView {
    actual: Vec<f64>,
    predicted: Vec<f64>,
    report: MetricReport,
    /// Last mini-batch loss of every epoch.
    minibatch_loss: Vec<f64>,
}

/// Trains a small single-building network and returns its test-period
/// forecast.
pub fn forecast_json(seed: u64, days: usize, building: usize, vector_name: &str, epochs: usize) -> Result<String, String> {
    let ds = dataset(seed, days)?;
    let b = building_index(&ds, building)?;
    let v = vector(vector_name)?;
    if epochs > 200 {
        return Err("at most 200 epochs".into());
    }
    let setup = ModelSetup {
        arch: ArchOverride {
            filters: Some(6),
            kernel: Some(7),
            blocks: Some(2),
        },
        init_seed: seed,
        ..ModelSetup::new(
            FrameworkId::Cnn1,
            TrainConfig {
                max_epochs: epochs,
                batch_size: 64,
                shuffle_seed: seed,
                log_every: 1,
                ..TrainConfig::default()
            },
        )
    };
    let f = fit_single(&ds, b, v, vec![InputChannel::Energy(v)], SplitSpec::train_test(), &setup)
        .map_err(|e| e.to_string())?;
    let actual = f.test.actual.into_iter().next().unwrap_or_default();
    let predicted = f.test.predicted.into_iter().next().unwrap_or_default();
    let report = MetricReport::compute(&actual, &predicted).map_err(|e| e.to_string())?;
    to_json(&ForecastView {
        report,
        actual,
        predicted,
        minibatch_loss: f.history.rows.iter().map(|r| r.minibatch_loss).collect(),
    })
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synth(seed: u32, days: u32, building: u32) -> Result<String, JsValue> {
    js(synth_json(seed.into(), days as usize, building as usize))
}

#[wasm_bindgen]
pub fn correlation(seed: u32, days: u32, vector: &str) -> Result<String, JsValue> {
    js(correlation_json(seed.into(), days as usize, vector))
}

#[wasm_bindgen]
pub fn forecast(seed: u32, days: u32, building: u32, vector: &str, epochs: u32) -> Result<String, JsValue> {
    js(forecast_json(seed.into(), days as usize, building as usize, vector, epochs as usize))
}
