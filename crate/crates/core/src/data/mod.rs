//! Half-hourly multi-energy building loads and the supervised windows built
//! from them.

mod csv_io;
mod synth;
mod window;

pub use csv_io::{load_csv, load_meta_csv, read_csv, write_csv, write_meta_csv};
pub use synth::{synth_generate, SynthConfig};
pub use window::{
    assemble_input, make_series_windows, make_windows, split, split_ranges, InputChannel,
    InputLayout, MinMaxScaler, Partitioned, SplitMode, SplitRanges, SplitSpec, WindowSet, WINDOW,
};

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples per day at the half-hour cadence.
pub const SAMPLES_PER_DAY: usize = 48;
pub const CADENCE_MINUTES: i64 = 30;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("ragged series: {0}")]
    RaggedSeries(String),
    #[error("negative value {value} for building {building} ({vector}) at sample {index}")]
    NegativeValue {
        building: u32,
        vector: EnergyVector,
        index: usize,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("series length {0} is not a whole number of days")]
    PartialDay(usize),
    #[error("series of length {len} is too short, need more than {need}")]
    SeriesTooShort { len: usize, need: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("channel {channel} unavailable for building {building}")]
    ChannelUnavailable { building: u32, channel: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyVector {
    Electric,
    Heat,
    Gas,
}

impl EnergyVector {
    pub const ALL: [EnergyVector; 3] = [EnergyVector::Electric, EnergyVector::Heat, EnergyVector::Gas];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EnergyVector::Electric => "electric",
            EnergyVector::Heat => "heat",
            EnergyVector::Gas => "gas",
        }
    }
}

impl fmt::Display for EnergyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnergyVector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "electric" | "electricity" | "e" => Ok(EnergyVector::Electric),
            "heat" | "h" => Ok(EnergyVector::Heat),
            "gas" | "g" => Ok(EnergyVector::Gas),
            _ => Err(format!("unknown energy vector '{s}'")),
        }
    }
}

/// Network attachment of one building.
///
/// `coupled[v]` marks a conversion link between network `v` and another
/// network at this building (a heat pump couples electric and heat, a boiler
/// couples gas and heat).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingMeta {
    pub id: u32,
    pub nodes: [Option<u32>; 3],
    pub coupled: [bool; 3],
}

impl BuildingMeta {
    pub fn plain(id: u32) -> Self {
        Self {
            id,
            nodes: [None; 3],
            coupled: [false; 3],
        }
    }

    /// Whether `other`'s previous consumption is a physically justified
    /// extra input for predicting `target`.
    pub fn links(&self, target: EnergyVector, other: EnergyVector) -> bool {
        target != other && self.coupled[target.index()] && self.coupled[other.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiEnergyDataset {
    start: NaiveDateTime,
    buildings: Vec<BuildingMeta>,
    series: Vec<[Vec<f64>; 3]>,
    temperature: Option<Vec<f64>>,
    solar: Option<Vec<f64>>,
}

impl MultiEnergyDataset {
    pub fn new(
        start: NaiveDateTime,
        buildings: Vec<BuildingMeta>,
        series: Vec<[Vec<f64>; 3]>,
        temperature: Option<Vec<f64>>,
        solar: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if buildings.is_empty() || buildings.len() != series.len() {
            return Err(DataError::RaggedSeries(format!(
                "{} buildings but {} series groups",
                buildings.len(),
                series.len()
            )));
        }
        let len = series[0][0].len();
        if len == 0 {
            return Err(DataError::SeriesTooShort { len, need: 0 });
        }
        if !len.is_multiple_of(SAMPLES_PER_DAY) {
            return Err(DataError::PartialDay(len));
        }
        for (meta, group) in buildings.iter().zip(&series) {
            for v in EnergyVector::ALL {
                let s = &group[v.index()];
                if s.len() != len {
                    return Err(DataError::RaggedSeries(format!(
                        "building {} {v} has {} samples, expected {len}",
                        meta.id,
                        s.len()
                    )));
                }
                if let Some((index, &value)) = s.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
                    if !value.is_finite() {
                        return Err(DataError::NonFinite(format!("building {} {v}", meta.id)));
                    }
                    return Err(DataError::NegativeValue {
                        building: meta.id,
                        vector: v,
                        index,
                        value,
                    });
                }
            }
        }
        for (name, ex) in [("temperature", &temperature), ("solar", &solar)] {
            if let Some(s) = ex {
                if s.len() != len {
                    return Err(DataError::RaggedSeries(format!(
                        "{name} has {} samples, expected {len}",
                        s.len()
                    )));
                }
                if s.iter().any(|x| !x.is_finite()) {
                    return Err(DataError::NonFinite(name.to_string()));
                }
            }
        }
        Ok(Self {
            start,
            buildings,
            series,
            temperature,
            solar,
        })
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// Number of half-hour samples `T`.
    pub fn len(&self) -> usize {
        self.series[0][0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn days(&self) -> usize {
        self.len() / SAMPLES_PER_DAY
    }

    pub fn num_buildings(&self) -> usize {
        self.buildings.len()
    }

    pub fn buildings(&self) -> &[BuildingMeta] {
        &self.buildings
    }

    pub fn building(&self, index: usize) -> &BuildingMeta {
        &self.buildings[index]
    }

    pub fn set_meta(&mut self, meta: Vec<BuildingMeta>) -> Result<(), DataError> {
        if meta.len() != self.buildings.len()
            || meta.iter().zip(&self.buildings).any(|(a, b)| a.id != b.id)
        {
            return Err(DataError::Invalid(
                "metadata must list the same buildings in the same order".into(),
            ));
        }
        self.buildings = meta;
        Ok(())
    }

    /// Position of a building id.
    pub fn building_index(&self, id: u32) -> Option<usize> {
        self.buildings.iter().position(|b| b.id == id)
    }

    pub fn series(&self, building: usize, vector: EnergyVector) -> &[f64] {
        &self.series[building][vector.index()]
    }

    pub fn temperature(&self) -> Option<&[f64]> {
        self.temperature.as_deref()
    }

    pub fn solar(&self) -> Option<&[f64]> {
        self.solar.as_deref()
    }

    /// A building whose series for `vector` is identically zero.
    pub fn is_zero(&self, building: usize, vector: EnergyVector) -> bool {
        self.series(building, vector).iter().all(|&x| x == 0.0)
    }

    pub fn nonzero_buildings(&self, vector: EnergyVector) -> Vec<usize> {
        (0..self.num_buildings())
            .filter(|&b| !self.is_zero(b, vector))
            .collect()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + Duration::minutes(CADENCE_MINUTES * index as i64)
    }
}

#[cfg(test)]
pub(crate) fn test_dataset(days: usize, buildings: usize) -> MultiEnergyDataset {
    let len = days * SAMPLES_PER_DAY;
    let series = (0..buildings)
        .map(|b| {
            [
                (0..len).map(|t| (b + 1) as f64 + (t % 48) as f64).collect(),
                (0..len).map(|t| 2.0 * (b + 1) as f64 + (t % 7) as f64).collect(),
                vec![0.0; len],
            ]
        })
        .collect();
    let meta = (0..buildings as u32).map(BuildingMeta::plain).collect();
    let start = chrono::NaiveDate::from_ymd_opt(2013, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    MultiEnergyDataset::new(start, meta, series, None, None).unwrap()
}
