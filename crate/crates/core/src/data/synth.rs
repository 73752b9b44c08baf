//! Synthetic stand-in for a campus-scale integrated energy system.
//!
//! Electric demand follows a shared occupancy profile (daily plus weekday /
//! weekend cycle) with little noise, heat follows heating degree-hours with
//! persistent noise, and gas is a low baseline plus sparse boiler-firing
//! spikes. A fixed number of buildings is zero for each vector.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BuildingMeta, DataError, EnergyVector, MultiEnergyDataset, SAMPLES_PER_DAY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_days: usize,
    pub start_date: NaiveDate,
    pub num_buildings: usize,
    /// Buildings with identically zero electric demand.
    pub zero_electric: usize,
    pub zero_heat: usize,
    pub zero_gas: usize,
    /// Gas users with a very small consumption scale.
    pub low_gas: usize,
    /// Relative standard deviation of electric noise.
    pub electric_noise: f64,
    pub heat_noise: f64,
    /// Heat demand per heating degree, relative to the building scale.
    pub heat_temperature_coupling: f64,
    /// Boiler firing probability per half-hour at reference conditions.
    pub gas_spike_rate: f64,
    pub gas_noise: f64,
    /// Emit temperature and solar radiance series.
    pub weather: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_days: 90,
            start_date: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            num_buildings: 39,
            zero_electric: 11,
            zero_heat: 9,
            zero_gas: 18,
            low_gas: 13,
            electric_noise: 0.03,
            heat_noise: 0.10,
            heat_temperature_coupling: 1.0,
            gas_spike_rate: 0.05,
            gas_noise: 0.3,
            weather: true,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        let b = self.num_buildings;
        if b == 0 || self.num_days == 0 {
            return Err(DataError::Invalid("need at least one building and one day".into()));
        }
        if self.zero_electric > b || self.zero_heat > b || self.zero_gas + self.low_gas > b {
            return Err(DataError::Invalid(format!(
                "zero/low building counts exceed {b} buildings"
            )));
        }
        for (name, v) in [
            ("electric_noise", self.electric_noise),
            ("heat_noise", self.heat_noise),
            ("heat_temperature_coupling", self.heat_temperature_coupling),
            ("gas_spike_rate", self.gas_spike_rate),
            ("gas_noise", self.gas_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DataError::Invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-variance AR(1) stream.
struct Ar1 {
    rho: f64,
    state: f64,
}

impl Ar1 {
    fn new(rho: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rho,
            state: gaussian(rng),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.rho * self.state + (1.0 - self.rho * self.rho).sqrt() * gaussian(rng);
        self.state
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let d = (hour - centre) / width;
    (-d * d).exp()
}

/// Building occupancy in `[0, 1]`.
fn occupancy(hour: f64, weekday: Weekday) -> f64 {
    let peak = match weekday {
        Weekday::Sat | Weekday::Sun => 0.35,
        _ => 1.0,
    };
    peak * bump(hour, 13.0, 3.8)
}

struct Weather {
    temperature: Vec<f64>,
    solar: Vec<f64>,
}

fn weather(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Weather {
    let len = cfg.num_days * SAMPLES_PER_DAY;
    let mut temperature = Vec::with_capacity(len);
    let mut solar = Vec::with_capacity(len);
    let mut anomaly = Ar1::new(0.7, rng);
    for d in 0..cfg.num_days {
        let date = cfg.start_date + chrono::Duration::days(d as i64);
        let doy = date.ordinal0() as f64;
        // cold and flat through March, warming through April and May
        let seasonal = 5.2 + 0.1 * (doy - 80.0).max(0.0).min(120.0);
        let day_anomaly = 1.6 * anomaly.next(rng);
        let season = (1.0 - (2.0 * PI * (doy + 10.0) / 365.0).cos()) / 2.0;
        let daylen = 7.5 + 9.0 * season;
        let sunrise = 12.2 - daylen / 2.0;
        let peak = 180.0 + 520.0 * season;
        let cloud: f64 = rng.gen_range(0.15..1.0);
        for slot in 0..SAMPLES_PER_DAY {
            let hour = slot as f64 / 2.0;
            let diurnal = 3.0 * (2.0 * PI * (hour - 15.0) / 24.0).cos();
            temperature.push(seasonal + diurnal + day_anomaly + 0.3 * gaussian(rng));
            let x = (hour - sunrise) / daylen;
            let s = if (0.0..=1.0).contains(&x) {
                peak * (PI * x).sin() * cloud
            } else {
                0.0
            };
            solar.push(s);
        }
    }
    Weather { temperature, solar }
}

/// Generates a dataset that is a pure function of `(cfg, seed)`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<MultiEnergyDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.num_days * SAMPLES_PER_DAY;
    let w = weather(cfg, &mut rng);
    let nb = cfg.num_buildings;

    let mut order: Vec<usize> = (0..nb).collect();
    let mut mask = |n: usize, rng: &mut ChaCha8Rng| {
        order.shuffle(rng);
        order.clone().into_iter().take(n).collect::<Vec<_>>()
    };
    let zero_e = mask(cfg.zero_electric, &mut rng);
    let zero_h = mask(cfg.zero_heat, &mut rng);
    let gas_order = mask(cfg.zero_gas + cfg.low_gas, &mut rng);
    let (zero_g, low_g) = gas_order.split_at(cfg.zero_gas);

    let mut series = Vec::with_capacity(nb);
    let mut meta = Vec::with_capacity(nb);
    for b in 0..nb {
        let has = [!zero_e.contains(&b), !zero_h.contains(&b), !zero_g.contains(&b)];
        let heat_pump = has[0] && has[1] && rng.gen_bool(0.4);
        let boiler = has[2] && has[1] && rng.gen_bool(0.6);

        let e_scale: f64 = rng.gen_range(30.0..300.0);
        let e_base: f64 = rng.gen_range(0.3..0.6);
        let e_shift: f64 = rng.gen_range(-1.0..1.0);
        let h_scale: f64 = rng.gen_range(40.0..400.0);
        let g_scale: f64 = if low_g.contains(&b) {
            rng.gen_range(0.3..1.0)
        } else {
            rng.gen_range(15.0..80.0)
        };
        let mut e_noise = Ar1::new(0.6, &mut rng);
        let mut h_noise = Ar1::new(0.85, &mut rng);

        let mut electric = vec![0.0; len];
        let mut heat = vec![0.0; len];
        let mut gas = vec![0.0; len];
        let mut spike_left = 0usize;
        let mut spike_level = 0.0;
        let mut day_level = 1.0;
        for t in 0..len {
            let slot = t % SAMPLES_PER_DAY;
            if slot == 0 {
                day_level = rng.gen_range(0.85..1.15);
            }
            let date = cfg.start_date + chrono::Duration::days((t / SAMPLES_PER_DAY) as i64);
            let hour = slot as f64 / 2.0;
            let occ = occupancy(hour - e_shift, date.weekday());
            let hdd = (15.5 - w.temperature[t]).max(0.0);

            let en = e_noise.next(&mut rng);
            if has[0] {
                let shape = e_base + (1.0 - e_base) * occ;
                electric[t] = (e_scale * shape * (1.0 + cfg.electric_noise * en)).max(0.0);
            }
            let hn = h_noise.next(&mut rng);
            if has[1] {
                let schedule = 0.6 + 0.4 * bump(hour, 8.0, 2.5).max(occ);
                let level = 0.15 + cfg.heat_temperature_coupling * hdd / 12.0;
                heat[t] = (h_scale * level * schedule * day_level * (1.0 + cfg.heat_noise * hn)).max(0.0);
            }
            let gn = gaussian(&mut rng);
            let fire: f64 = rng.gen();
            let magnitude: f64 = rng.gen_range(0.5..1.5);
            let duration = rng.gen_range(1..=4usize);
            if has[2] {
                let mut p = cfg.gas_spike_rate * (0.5 + hdd / 10.0) * (0.3 + occ);
                if boiler && has[1] {
                    p *= 1.0 + heat[t] / (h_scale * 0.5);
                }
                if spike_left == 0 && fire < p.min(1.0) {
                    spike_left = duration;
                    spike_level = g_scale * magnitude;
                }
                let spike = if spike_left > 0 {
                    spike_left -= 1;
                    spike_level
                } else {
                    0.0
                };
                let baseline = g_scale * 0.08 * (0.3 + occ);
                gas[t] = ((baseline + spike) * (1.0 + cfg.gas_noise * gn)).max(0.0);
            }
        }
        series.push([electric, heat, gas]);
        meta.push(BuildingMeta {
            id: b as u32,
            nodes: [
                has[0].then_some((b % 20) as u32 + 1),
                has[1].then_some((b % 25) as u32 + 1),
                has[2].then_some((b % 35) as u32 + 1),
            ],
            coupled: [heat_pump, heat_pump || boiler, boiler],
        });
    }
    let start = cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight");
    let (temperature, solar) = if cfg.weather {
        (Some(w.temperature), Some(w.solar))
    } else {
        (None, None)
    };
    MultiEnergyDataset::new(start, meta, series, temperature, solar)
}

impl MultiEnergyDataset {
    /// Counts of all-zero buildings per vector.
    pub fn zero_counts(&self) -> [usize; 3] {
        EnergyVector::ALL.map(|v| {
            (0..self.num_buildings())
                .filter(|&b| self.is_zero(b, v))
                .count()
        })
    }
}
