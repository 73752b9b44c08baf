//! Sliding windows, chronological splits and per-framework input assembly.
//!
//! A window whose target is sample `t` covers samples `[t - 48, t - 1]`, so
//! the forecast horizon is one half-hour. Splits partition *target* indices;
//! the first test window may look back into the training period, which is
//! exactly what a forecaster sees in operation.

use std::ops::Range;

use chrono::Datelike;

use super::{DataError, EnergyVector, MultiEnergyDataset, SAMPLES_PER_DAY};
use crate::arch::FrameworkId;
use crate::tensor::{Shape4, Tensor4};

/// Input window length in samples (24 hours).
pub const WINDOW: usize = SAMPLES_PER_DAY;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    /// `48 x width x channels x n_windows`
    pub inputs: Tensor4,
    /// Row-major `n_windows x outputs`.
    pub targets: Vec<f64>,
    pub outputs: usize,
    /// Sample index of each window's target.
    pub target_index: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.target_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_index.is_empty()
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn target_column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.targets[i * self.outputs + k]).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<f64>), DataError> {
        let inputs = self
            .inputs
            .select(indices)
            .map_err(|e| DataError::Invalid(e.to_string()))?;
        let mut targets = Vec::with_capacity(indices.len() * self.outputs);
        for &i in indices {
            targets.extend_from_slice(self.target_row(i));
        }
        Ok((inputs, targets))
    }

    /// Concatenates window sets with identical layouts.
    pub fn concat(parts: &[&WindowSet]) -> Result<WindowSet, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::Invalid("nothing to concatenate".into()))?;
        let shape = first.inputs.shape();
        let mut data = Vec::new();
        let mut targets = Vec::new();
        let mut target_index = Vec::new();
        for p in parts {
            if p.inputs.shape().with_batch(1) != shape.with_batch(1) || p.outputs != first.outputs {
                return Err(DataError::Invalid("window layouts differ".into()));
            }
            data.extend_from_slice(p.inputs.data());
            targets.extend_from_slice(&p.targets);
            target_index.extend_from_slice(&p.target_index);
        }
        let n = target_index.len();
        Ok(WindowSet {
            inputs: Tensor4::from_vec(shape.with_batch(n), data)
                .map_err(|e| DataError::Invalid(e.to_string()))?,
            targets,
            outputs: first.outputs,
            target_index,
        })
    }
}

/// Builds windows from a `width x channels` grid of series. Window `i` has
/// target index `target_range.start + i`; input element `(h, w, c)` is
/// `grid[w][c][t - 48 + h]`; target `k` is `targets[k][t]`.
pub fn make_windows(
    grid: &[Vec<&[f64]>],
    targets: &[&[f64]],
    target_range: Range<usize>,
) -> Result<WindowSet, DataError> {
    let width = grid.len();
    let channels = grid.first().map_or(0, Vec::len);
    if width == 0 || channels == 0 || targets.is_empty() {
        return Err(DataError::Invalid("empty input grid or target list".into()));
    }
    let len = grid[0][0].len();
    let lengths_ok = grid.iter().all(|col| col.len() == channels && col.iter().all(|s| s.len() == len))
        && targets.iter().all(|s| s.len() == len);
    if !lengths_ok {
        return Err(DataError::RaggedSeries("window sources differ in length".into()));
    }
    if len <= WINDOW {
        return Err(DataError::SeriesTooShort { len, need: WINDOW });
    }
    if target_range.start < WINDOW || target_range.end > len || target_range.is_empty() {
        return Err(DataError::Invalid(format!(
            "target range {target_range:?} outside [{WINDOW}, {len})"
        )));
    }
    let n = target_range.len();
    let sample = WINDOW * width * channels;
    let mut data = Vec::with_capacity(n * sample);
    let mut tgt = Vec::with_capacity(n * targets.len());
    for t in target_range.clone() {
        for h in 0..WINDOW {
            for col in grid {
                for s in col {
                    data.push(s[t - WINDOW + h]);
                }
            }
        }
        tgt.extend(targets.iter().map(|s| s[t]));
    }
    Ok(WindowSet {
        inputs: Tensor4::from_vec(Shape4::new(WINDOW, width, channels, n), data)
            .map_err(|e| DataError::Invalid(e.to_string()))?,
        targets: tgt,
        outputs: targets.len(),
        target_index: target_range.collect(),
    })
}

/// Every stride-1 window of one series: `T - 48` windows.
pub fn make_series_windows(series: &[f64]) -> Result<WindowSet, DataError> {
    if series.len() <= WINDOW {
        return Err(DataError::SeriesTooShort {
            len: series.len(),
            need: WINDOW,
        });
    }
    make_windows(&[vec![series]], &[series], WINDOW..series.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Two thirds training, one third testing.
    TrainTest,
    /// 60 % training, 10 % validation, 30 % testing.
    TrainValTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Use the last calendar month in the data as the test period.
    #[serde(default)]
    pub calendar_months: bool,
}

impl SplitSpec {
    pub fn train_test() -> Self {
        Self {
            mode: SplitMode::TrainTest,
            calendar_months: false,
        }
    }

    pub fn train_val_test() -> Self {
        Self {
            mode: SplitMode::TrainValTest,
            calendar_months: false,
        }
    }
}

/// Target-index ranges of each partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub validation: Option<Range<usize>>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn train_days(&self) -> usize {
        self.train.end / SAMPLES_PER_DAY
    }

    pub fn validation_days(&self) -> usize {
        self.validation.as_ref().map_or(0, |r| r.len() / SAMPLES_PER_DAY)
    }

    pub fn test_days(&self) -> usize {
        self.test.len() / SAMPLES_PER_DAY
    }
}

/// Whole-day chronological split. Training targets start at sample 48 so
/// every training window has a full day of history.
pub fn split_ranges(ds: &MultiEnergyDataset, spec: SplitSpec) -> Result<SplitRanges, DataError> {
    let days = ds.days();
    let last_month_days = || {
        let last = ds.timestamp(ds.len() - 1).date();
        (0..days)
            .rev()
            .take_while(|&d| {
                let date = ds.timestamp(d * SAMPLES_PER_DAY).date();
                date.year() == last.year() && date.month() == last.month()
            })
            .count()
    };
    let (train_days, val_days) = match (spec.mode, spec.calendar_months) {
        (SplitMode::TrainTest, false) => ((days * 2 + 1) / 3, 0),
        (SplitMode::TrainTest, true) => (days - last_month_days(), 0),
        (SplitMode::TrainValTest, false) => {
            let train = (days * 6 + 5) / 10;
            let val = ((days + 5) / 10).max(1);
            (train, val)
        }
        (SplitMode::TrainValTest, true) => {
            let val = ((days + 5) / 10).max(1);
            (days.saturating_sub(last_month_days() + val), val)
        }
    };
    if train_days < 2 || train_days + val_days >= days {
        return Err(DataError::InsufficientData(format!(
            "{days} days cannot be split into {train_days} training, {val_days} validation and a test period"
        )));
    }
    let d = SAMPLES_PER_DAY;
    let train_end = train_days * d;
    let val_end = train_end + val_days * d;
    Ok(SplitRanges {
        train: WINDOW..train_end,
        validation: (val_days > 0).then_some(train_end..val_end),
        test: val_end..ds.len(),
    })
}

/// One input variable of a single-building model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputChannel {
    Energy(EnergyVector),
    Temperature,
    Solar,
}

impl std::fmt::Display for InputChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputChannel::Energy(v) => write!(f, "{v}"),
            InputChannel::Temperature => f.write_str("temperature"),
            InputChannel::Solar => f.write_str("solar"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// One building; each variable is a column of the `48 x k x 1` input.
    SingleBuilding {
        building: usize,
        target: EnergyVector,
        channels: Vec<InputChannel>,
    },
    /// Every building and vector: `48 x B x 3` in, `3B` out ordered
    /// vector-major (`k = vector * B + building`).
    Joint,
    /// Every building for one vector: `48 x B x 1` in, `B` out.
    AllBuildings(EnergyVector),
}

impl InputLayout {
    /// Checks that the layout is legal for the framework.
    pub fn for_framework(
        framework: FrameworkId,
        building: usize,
        target: EnergyVector,
        channels: Vec<InputChannel>,
    ) -> Result<Self, DataError> {
        let energy = channels
            .iter()
            .filter(|c| matches!(c, InputChannel::Energy(_)))
            .count();
        match framework {
            FrameworkId::Cnn1 | FrameworkId::Cnn3 | FrameworkId::Cnn6 => {
                if channels.first() != Some(&InputChannel::Energy(target)) || energy != 1 {
                    return Err(DataError::Invalid(format!(
                        "{framework} takes the {target} series as its only energy input"
                    )));
                }
            }
            FrameworkId::Cnn2 => {
                if channels.first() != Some(&InputChannel::Energy(target)) || !(2..=3).contains(&energy) {
                    return Err(DataError::Invalid(format!(
                        "{framework} takes the {target} series first plus one or two more energy inputs"
                    )));
                }
            }
            FrameworkId::Cnn4 => return Ok(InputLayout::Joint),
            FrameworkId::Cnn5 => return Ok(InputLayout::AllBuildings(target)),
        }
        Ok(InputLayout::SingleBuilding {
            building,
            target,
            channels,
        })
    }
}

fn channel_series(
    ds: &MultiEnergyDataset,
    building: usize,
    channel: InputChannel,
) -> Result<&[f64], DataError> {
    let unavailable = || DataError::ChannelUnavailable {
        building: ds.building(building).id,
        channel: channel.to_string(),
    };
    match channel {
        InputChannel::Energy(v) => {
            if ds.is_zero(building, v) {
                Err(unavailable())
            } else {
                Ok(ds.series(building, v))
            }
        }
        InputChannel::Temperature => ds.temperature().ok_or_else(unavailable),
        InputChannel::Solar => ds.solar().ok_or_else(unavailable),
    }
}

/// Windows for one layout over a target-index range.
pub fn assemble_input(
    ds: &MultiEnergyDataset,
    layout: &InputLayout,
    target_range: Range<usize>,
) -> Result<WindowSet, DataError> {
    if building_out_of_range(ds, layout) {
        return Err(DataError::Invalid("building index out of range".into()));
    }
    match layout {
        InputLayout::SingleBuilding {
            building,
            target,
            channels,
        } => {
            let target_series = channel_series(ds, *building, InputChannel::Energy(*target))?;
            let grid = channels
                .iter()
                .map(|&c| channel_series(ds, *building, c).map(|s| vec![s]))
                .collect::<Result<Vec<_>, _>>()?;
            make_windows(&grid, &[target_series], target_range)
        }
        InputLayout::Joint => {
            let grid: Vec<Vec<&[f64]>> = (0..ds.num_buildings())
                .map(|b| EnergyVector::ALL.iter().map(|&v| ds.series(b, v)).collect())
                .collect();
            let targets: Vec<&[f64]> = EnergyVector::ALL
                .iter()
                .flat_map(|&v| (0..ds.num_buildings()).map(move |b| ds.series(b, v)))
                .collect();
            make_windows(&grid, &targets, target_range)
        }
        InputLayout::AllBuildings(v) => {
            let grid: Vec<Vec<&[f64]>> = (0..ds.num_buildings()).map(|b| vec![ds.series(b, *v)]).collect();
            let targets: Vec<&[f64]> = (0..ds.num_buildings()).map(|b| ds.series(b, *v)).collect();
            make_windows(&grid, &targets, target_range)
        }
    }
}

fn building_out_of_range(ds: &MultiEnergyDataset, layout: &InputLayout) -> bool {
    matches!(layout, InputLayout::SingleBuilding { building, .. } if *building >= ds.num_buildings())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partitioned {
    pub train: WindowSet,
    pub validation: Option<WindowSet>,
    pub test: WindowSet,
}

/// Splits a dataset chronologically and windows each partition.
pub fn split(
    ds: &MultiEnergyDataset,
    layout: &InputLayout,
    spec: SplitSpec,
) -> Result<Partitioned, DataError> {
    let ranges = split_ranges(ds, spec)?;
    Ok(Partitioned {
        train: assemble_input(ds, layout, ranges.train.clone())?,
        validation: ranges
            .validation
            .clone()
            .map(|r| assemble_input(ds, layout, r))
            .transpose()?,
        test: assemble_input(ds, layout, ranges.test)?,
    })
}

/// Per-column (width x channel) 0-1 scaling of window inputs.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on training windows only.
    pub fn fit(train: &WindowSet) -> Self {
        let s = train.inputs.shape();
        let cols = s.w * s.c;
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for (i, &x) in train.inputs.data().iter().enumerate() {
            let k = i % cols;
            min[k] = min[k].min(x);
            max[k] = max[k].max(x);
        }
        Self { min, max }
    }

    pub fn apply(&self, set: &mut WindowSet) -> Result<(), DataError> {
        let s = set.inputs.shape();
        let cols = s.w * s.c;
        if cols != self.min.len() {
            return Err(DataError::Invalid(format!(
                "scaler fitted on {} columns, windows have {cols}",
                self.min.len()
            )));
        }
        for (i, x) in set.inputs.data_mut().iter_mut().enumerate() {
            let k = i % cols;
            let range = self.max[k] - self.min[k];
            *x = if range > 0.0 { (*x - self.min[k]) / range } else { 0.0 };
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_dataset;

    #[test]
    fn fifty_samples_give_two_windows() {
        let s: Vec<f64> = (0..50).map(f64::from).collect();
        let w = make_series_windows(&s).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.targets, vec![48.0, 49.0]);
        assert_eq!(w.inputs.shape(), Shape4::new(48, 1, 1, 2));
        assert_eq!(w.inputs.get(0, 0, 0, 1), 1.0);
        assert_eq!(w.inputs.get(47, 0, 0, 1), 48.0);
        assert!(matches!(
            make_series_windows(&s[..48]),
            Err(DataError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn three_variables_sit_along_width() {
        let ds = test_dataset(3, 1);
        let mut ds2 = ds.clone();
        // give the gas series some content so it is available
        let gas: Vec<f64> = (0..ds.len()).map(|t| (t % 5) as f64).collect();
        let series = vec![[
            ds.series(0, EnergyVector::Electric).to_vec(),
            ds.series(0, EnergyVector::Heat).to_vec(),
            gas,
        ]];
        ds2 = MultiEnergyDataset::new(ds2.start(), ds2.buildings().to_vec(), series, None, None).unwrap();
        let layout = InputLayout::for_framework(
            FrameworkId::Cnn2,
            0,
            EnergyVector::Heat,
            vec![
                InputChannel::Energy(EnergyVector::Heat),
                InputChannel::Energy(EnergyVector::Electric),
                InputChannel::Energy(EnergyVector::Gas),
            ],
        )
        .unwrap();
        let w = assemble_input(&ds2, &layout, 48..ds2.len()).unwrap();
        assert_eq!(w.inputs.shape(), Shape4::new(48, 3, 1, ds2.len() - 48));
        assert_eq!(w.inputs.get(5, 1, 0, 0), ds2.series(0, EnergyVector::Electric)[5]);
        assert_eq!(w.target_row(0), &[ds2.series(0, EnergyVector::Heat)[48]]);
    }

    #[test]
    fn joint_layout_shapes() {
        let ds = test_dataset(3, 4);
        let w = assemble_input(&ds, &InputLayout::Joint, 48..ds.len()).unwrap();
        assert_eq!(w.inputs.shape(), Shape4::new(48, 4, 3, 96));
        assert_eq!(w.outputs, 12);
        // vector-major head: heat of building 2 is output 4 + 2
        assert_eq!(w.target_row(0)[6], ds.series(2, EnergyVector::Heat)[48]);
        assert_eq!(w.inputs.get(3, 2, 1, 0), ds.series(2, EnergyVector::Heat)[3]);
        let w5 = assemble_input(&ds, &InputLayout::AllBuildings(EnergyVector::Electric), 48..96).unwrap();
        assert_eq!(w5.inputs.shape(), Shape4::new(48, 4, 1, 48));
        assert_eq!(w5.outputs, 4);
    }

    #[test]
    fn zero_building_channel_is_unavailable() {
        let ds = test_dataset(2, 1);
        let layout = InputLayout::SingleBuilding {
            building: 0,
            target: EnergyVector::Gas,
            channels: vec![InputChannel::Energy(EnergyVector::Gas)],
        };
        assert!(matches!(
            assemble_input(&ds, &layout, 48..96),
            Err(DataError::ChannelUnavailable { .. })
        ));
        let temp = InputLayout::SingleBuilding {
            building: 0,
            target: EnergyVector::Electric,
            channels: vec![InputChannel::Energy(EnergyVector::Electric), InputChannel::Temperature],
        };
        assert!(matches!(
            assemble_input(&ds, &temp, 48..96),
            Err(DataError::ChannelUnavailable { .. })
        ));
    }

    #[test]
    fn framework_layout_rules() {
        let e = InputChannel::Energy(EnergyVector::Electric);
        let h = InputChannel::Energy(EnergyVector::Heat);
        assert!(InputLayout::for_framework(FrameworkId::Cnn1, 0, EnergyVector::Electric, vec![e]).is_ok());
        assert!(InputLayout::for_framework(FrameworkId::Cnn1, 0, EnergyVector::Electric, vec![e, h]).is_err());
        assert!(InputLayout::for_framework(FrameworkId::Cnn1, 0, EnergyVector::Heat, vec![e]).is_err());
        assert!(InputLayout::for_framework(FrameworkId::Cnn2, 0, EnergyVector::Heat, vec![h]).is_err());
        assert!(InputLayout::for_framework(
            FrameworkId::Cnn1,
            0,
            EnergyVector::Electric,
            vec![e, InputChannel::Temperature]
        )
        .is_ok());
    }

    #[test]
    fn split_day_counts() {
        let ds = test_dataset(90, 1);
        let r = split_ranges(&ds, SplitSpec::train_test()).unwrap();
        assert_eq!((r.train_days(), r.test_days()), (60, 30));
        let cal = split_ranges(
            &ds,
            SplitSpec {
                mode: SplitMode::TrainTest,
                calendar_months: true,
            },
        )
        .unwrap();
        assert_eq!((cal.train_days(), cal.test_days()), (59, 31));
        assert_eq!(cal.test.len(), 1488);

        let ds100 = test_dataset(100, 1);
        let r = split_ranges(&ds100, SplitSpec::train_val_test()).unwrap();
        assert_eq!((r.train_days(), r.validation_days(), r.test_days()), (60, 10, 30));
        assert_eq!(r.validation.unwrap().len(), 480);

        assert!(matches!(
            split_ranges(&test_dataset(2, 1), SplitSpec::train_test()),
            Err(DataError::InsufficientData(_))
        ));
    }

    #[test]
    fn scaler_maps_training_inputs_into_unit_interval() {
        let ds = test_dataset(4, 1);
        let layout = InputLayout::SingleBuilding {
            building: 0,
            target: EnergyVector::Electric,
            channels: vec![InputChannel::Energy(EnergyVector::Electric)],
        };
        let mut p = split(&ds, &layout, SplitSpec::train_test()).unwrap();
        let scaler = MinMaxScaler::fit(&p.train);
        let before = scaler.clone();
        scaler.apply(&mut p.train).unwrap();
        scaler.apply(&mut p.test).unwrap();
        assert_eq!(scaler, before);
        assert!(p.train.inputs.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
