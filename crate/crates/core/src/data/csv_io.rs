//! Long-format CSV: one row per (timestamp, building).
//!
//! ```text
//! timestamp,building_id,electric_kw,heat_kw,gas_kw[,temp_c,solar_wm2]
//! 2013-01-01T00:00:00,0,120.5,80.0,0
//! ```
//!
//! Timestamps are ISO-8601 local times on a strict 30-minute grid. Weather
//! columns are city-wide; the first row of each timestamp wins.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::{BuildingMeta, DataError, EnergyVector, MultiEnergyDataset, CADENCE_MINUTES};

const REQUIRED: [&str; 5] = ["timestamp", "building_id", "electric_kw", "heat_kw", "gas_kw"];
const META_HEADER: [&str; 7] = [
    "building_id",
    "electric_node",
    "heat_node",
    "gas_node",
    "coupled_electric",
    "coupled_heat",
    "coupled_gas",
];

pub fn load_csv(path: impl AsRef<Path>) -> Result<MultiEnergyDataset, DataError> {
    read_csv(File::open(path)?)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    s.parse::<NaiveDateTime>()
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").ok())
}

type Row = ([f64; 3], Option<f64>, Option<f64>);

pub fn read_csv(reader: impl Read) -> Result<MultiEnergyDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < REQUIRED.len() || names[..REQUIRED.len()] != REQUIRED {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("header must start with {}", REQUIRED.join(",")),
        });
    }
    let temp_col = names.iter().position(|&n| n == "temp_c");
    let solar_col = names.iter().position(|&n| n == "solar_wm2");
    for (i, n) in names.iter().enumerate().skip(REQUIRED.len()) {
        if Some(i) != temp_col && Some(i) != solar_col {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("unknown column '{n}'"),
            });
        }
    }

    let mut grid: BTreeMap<NaiveDateTime, BTreeMap<u32, Row>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| DataError::Parse { line, msg };
        if record.len() != names.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                names.len(),
                record.len()
            )));
        }
        let num = |i: usize| -> Result<f64, DataError> {
            let field = &record[i];
            if field.is_empty() {
                return Err(err(format!("missing value in column {}", names[i])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| err(format!("bad number '{field}' in column {}", names[i])))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value in column {}", names[i])));
            }
            Ok(v)
        };
        let ts = parse_timestamp(&record[0]).ok_or_else(|| err(format!("bad timestamp '{}'", &record[0])))?;
        let building: u32 = record[1]
            .parse()
            .map_err(|_| err(format!("bad building id '{}'", &record[1])))?;
        let mut kw = [0.0; 3];
        for v in EnergyVector::ALL {
            let x = num(2 + v.index())?;
            if x < 0.0 {
                return Err(DataError::NegativeValue {
                    building,
                    vector: v,
                    index: line as usize,
                    value: x,
                });
            }
            kw[v.index()] = x;
        }
        let temp = temp_col.map(num).transpose()?;
        let solar = solar_col.map(num).transpose()?;
        if grid.entry(ts).or_default().insert(building, (kw, temp, solar)).is_some() {
            return Err(err(format!("duplicate row for building {building} at {ts}")));
        }
    }

    let (&start, first) = grid
        .iter()
        .next()
        .ok_or_else(|| DataError::Parse {
            line: 1,
            msg: "no data rows".into(),
        })?;
    let ids: Vec<u32> = first.keys().copied().collect();
    let step = Duration::minutes(CADENCE_MINUTES);
    let mut series: Vec<[Vec<f64>; 3]> = vec![Default::default(); ids.len()];
    let mut temperature = temp_col.map(|_| Vec::new());
    let mut solar = solar_col.map(|_| Vec::new());
    for (k, (ts, rows)) in grid.iter().enumerate() {
        if *ts != start + step * k as i32 {
            return Err(DataError::RaggedSeries(format!(
                "timestamp {ts} breaks the 30-minute cadence"
            )));
        }
        if rows.len() != ids.len() || rows.keys().zip(&ids).any(|(a, b)| a != b) {
            return Err(DataError::RaggedSeries(format!(
                "timestamp {ts} lists {} buildings, expected {}",
                rows.len(),
                ids.len()
            )));
        }
        for (b, (kw, _, _)) in rows.values().enumerate() {
            for v in 0..3 {
                series[b][v].push(kw[v]);
            }
        }
        let (_, t0, s0) = rows.values().next().expect("non-empty");
        if let (Some(t), Some(x)) = (temperature.as_mut(), t0) {
            t.push(*x);
        }
        if let (Some(s), Some(x)) = (solar.as_mut(), s0) {
            s.push(*x);
        }
    }
    let meta = ids.iter().zip(&series).map(|(&id, s)| default_meta(id, s)).collect();
    MultiEnergyDataset::new(start, meta, series, temperature, solar)
}

/// Without a metadata file every non-zero vector of a building counts as
/// coupled.
fn default_meta(id: u32, series: &[Vec<f64>; 3]) -> BuildingMeta {
    let mut m = BuildingMeta::plain(id);
    for v in EnergyVector::ALL {
        m.coupled[v.index()] = series[v.index()].iter().any(|&x| x != 0.0);
    }
    m
}

pub fn write_csv(ds: &MultiEnergyDataset, writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    if ds.temperature().is_some() {
        header.push("temp_c");
    }
    if ds.solar().is_some() {
        header.push("solar_wm2");
    }
    w.write_record(&header)?;
    for t in 0..ds.len() {
        let ts = ds.timestamp(t).format("%Y-%m-%dT%H:%M:%S").to_string();
        for (b, meta) in ds.buildings().iter().enumerate() {
            let mut row = vec![ts.clone(), meta.id.to_string()];
            for v in EnergyVector::ALL {
                row.push(ds.series(b, v)[t].to_string());
            }
            if let Some(temp) = ds.temperature() {
                row.push(temp[t].to_string());
            }
            if let Some(s) = ds.solar() {
                row.push(s[t].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads building network metadata
/// (`building_id,electric_node,heat_node,gas_node,coupled_electric,coupled_heat,coupled_gas`;
/// empty node fields mean "not connected").
pub fn load_meta_csv(reader: impl Read) -> Result<Vec<BuildingMeta>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names != META_HEADER {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("metadata header must be {}", META_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: &str| DataError::Parse {
            line,
            msg: msg.to_string(),
        };
        let id = record[0].parse().map_err(|_| err("bad building id"))?;
        let mut m = BuildingMeta::plain(id);
        for v in 0..3 {
            let f = &record[1 + v];
            m.nodes[v] = if f.is_empty() {
                None
            } else {
                Some(f.parse().map_err(|_| err("bad node id"))?)
            };
            m.coupled[v] = match &record[4 + v] {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(err("coupling flags must be 0/1")),
            };
        }
        out.push(m);
    }
    Ok(out)
}

pub fn write_meta_csv(meta: &[BuildingMeta], writer: impl Write) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(META_HEADER)?;
    for m in meta {
        let mut row = vec![m.id.to_string()];
        row.extend(m.nodes.iter().map(|n| n.map(|x| x.to_string()).unwrap_or_default()));
        row.extend(m.coupled.iter().map(|&c| if c { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
