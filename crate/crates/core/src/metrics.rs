//! Forecast accuracy measures and network-total aggregation.

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::data::SAMPLES_PER_DAY;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("actual and predicted series differ in length ({actual} vs {predicted})")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("series is empty")]
    Empty,
    #[error("maximum actual value is not positive")]
    NonPositiveMax,
    #[error("ragged input: building {building} has {found} samples, expected {expected}")]
    RaggedInput {
        building: usize,
        expected: usize,
        found: usize,
    },
}

/// Paired actual and predicted values.
#[derive(Clone, Copy, Debug)]
pub struct EvalSeries<'a> {
    actual: &'a [f64],
    predicted: &'a [f64],
}

impl<'a> EvalSeries<'a> {
    pub fn new(actual: &'a [f64], predicted: &'a [f64]) -> Result<Self, MetricError> {
        if actual.len() != predicted.len() {
            return Err(MetricError::LengthMismatch {
                actual: actual.len(),
                predicted: predicted.len(),
            });
        }
        if actual.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(Self { actual, predicted })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn actual(&self) -> &[f64] {
        self.actual
    }

    pub fn predicted(&self) -> &[f64] {
        self.predicted
    }

    fn squared_error(&self) -> f64 {
        self.actual
            .iter()
            .zip(self.predicted)
            .map(|(a, p)| (p - a) * (p - a))
            .sum()
    }
}

/// Root-mean-square error divided by the largest actual value.
pub fn nrmse(e: &EvalSeries) -> Result<f64, MetricError> {
    let max = e.actual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(MetricError::NonPositiveMax);
    }
    Ok((e.squared_error() / e.len() as f64).sqrt() / max)
}

/// Signal-to-noise ratio in dB. A perfect forecast gives `+inf`; a zero
/// signal with non-zero error gives `-inf`.
pub fn snr_db(e: &EvalSeries) -> f64 {
    let signal: f64 = e.actual.iter().map(|a| a * a).sum();
    let noise = e.squared_error();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    if signal == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (signal / noise).log10()
}

/// Mean absolute percentage error over non-zero actuals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mape {
    /// `None` when every actual value is zero.
    pub value: Option<f64>,
    pub excluded: usize,
    pub included: usize,
}

pub fn mape_pct(e: &EvalSeries) -> Mape {
    let mut sum = 0.0;
    let mut included = 0;
    for (a, p) in e.actual.iter().zip(e.predicted) {
        if *a != 0.0 {
            sum += ((a - p) / a).abs();
            included += 1;
        }
    }
    Mape {
        value: (included > 0).then(|| 100.0 * sum / included as f64),
        excluded: e.len() - included,
        included,
    }
}

/// Elementwise sum of per-building series.
pub fn network_total(per_building: &[Vec<f64>]) -> Result<Vec<f64>, MetricError> {
    let len = per_building.first().map_or(0, Vec::len);
    let mut total = vec![0.0; len];
    for (b, s) in per_building.iter().enumerate() {
        if s.len() != len {
            return Err(MetricError::RaggedInput {
                building: b,
                expected: len,
                found: s.len(),
            });
        }
        for (t, x) in total.iter_mut().zip(s) {
            *t += x;
        }
    }
    Ok(total)
}

fn ser_f64_marker<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else if *x < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("NaN")
    }
}

fn de_f64_marker<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(x) => Ok(x),
        Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
    }
}

/// Renders a metric for CSV: finite values with full precision, infinities
/// as `inf`/`-inf`, missing values empty.
pub fn format_metric(x: Option<f64>) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_nan() => "NaN".into(),
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) if v == f64::NEG_INFINITY => "-inf".into(),
        Some(v) => v.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "ser_f64_marker", deserialize_with = "de_f64_marker")]
    pub snr_db: f64,
    /// `None` when the actuals are all zero.
    pub nrmse: Option<f64>,
    pub mape_pct: Option<f64>,
    pub n_excluded_zero_targets: usize,
    pub n: usize,
}

/// SNR and NRMSE bars a forecast must clear to be considered usable.
pub const SNR_THRESHOLD_DB: f64 = 8.0;
pub const NRMSE_THRESHOLD: f64 = 0.15;

impl MetricReport {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self, MetricError> {
        let e = EvalSeries::new(actual, predicted)?;
        let mape = mape_pct(&e);
        let nrmse = match nrmse(&e) {
            Ok(v) => Some(v),
            Err(MetricError::NonPositiveMax) => None,
            Err(other) => return Err(other),
        };
        Ok(Self {
            snr_db: snr_db(&e),
            nrmse,
            mape_pct: mape.value,
            n_excluded_zero_targets: mape.excluded,
            n: e.len(),
        })
    }

    pub fn acceptable(&self) -> bool {
        self.snr_db > SNR_THRESHOLD_DB && self.nrmse.is_some_and(|n| n < NRMSE_THRESHOLD)
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "framework",
        "vector",
        "split",
        "snr_db",
        "nrmse",
        "mape_pct",
        "n_excluded",
    ];

    pub fn csv_row(&self, framework: &str, vector: &str, split: &str) -> [String; 7] {
        [
            framework.to_string(),
            vector.to_string(),
            split.to_string(),
            format_metric(Some(self.snr_db)),
            format_metric(self.nrmse),
            format_metric(self.mape_pct),
            self.n_excluded_zero_targets.to_string(),
        ]
    }
}

/// Metrics of each whole day (48 samples) of an evaluation horizon.
pub fn per_day(actual: &[f64], predicted: &[f64]) -> Result<Vec<MetricReport>, MetricError> {
    EvalSeries::new(actual, predicted)?;
    actual
        .chunks_exact(SAMPLES_PER_DAY)
        .zip(predicted.chunks_exact(SAMPLES_PER_DAY))
        .map(|(a, p)| MetricReport::compute(a, p))
        .collect()
}

/// Mean of the finite daily SNR values and of the defined daily NRMSE values.
pub fn mean_of_daily(days: &[MetricReport]) -> (Option<f64>, Option<f64>) {
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    (
        mean(days.iter().map(|d| d.snr_db).filter(|s| s.is_finite()).collect()),
        mean(days.iter().filter_map(|d| d.nrmse).collect()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev<'a>(a: &'a [f64], p: &'a [f64]) -> EvalSeries<'a> {
        EvalSeries::new(a, p).unwrap()
    }

    #[test]
    fn hand_examples() {
        assert!((nrmse(&ev(&[2.0, 4.0], &[2.0, 2.0])).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((snr_db(&ev(&[3.0, 4.0], &[3.0, 3.0])) - 10.0 * 25f64.log10()).abs() < 1e-12);
        assert_eq!(snr_db(&ev(&[3.0, 4.0], &[3.0, 4.0])), f64::INFINITY);
        assert_eq!(snr_db(&ev(&[0.0, 0.0], &[1.0, 0.0])), f64::NEG_INFINITY);
        assert_eq!(nrmse(&ev(&[1.0, 5.0], &[1.0, 5.0])).unwrap(), 0.0);
        assert_eq!(mape_pct(&ev(&[100.0], &[90.0])).value, Some(10.0));
        assert_eq!(mape_pct(&ev(&[1.0, 2.0], &[1.0, 2.0])).value, Some(0.0));
        let m = mape_pct(&ev(&[0.0, 0.0], &[1.0, 2.0]));
        assert_eq!((m.value, m.excluded), (None, 2));
    }

    #[test]
    fn error_cases() {
        assert_eq!(EvalSeries::new(&[1.0], &[]).unwrap_err(), MetricError::LengthMismatch { actual: 1, predicted: 0 });
        assert_eq!(EvalSeries::new(&[], &[]).unwrap_err(), MetricError::Empty);
        assert_eq!(nrmse(&ev(&[0.0, 0.0], &[0.0, 1.0])), Err(MetricError::NonPositiveMax));
    }

    #[test]
    fn totals() {
        assert_eq!(network_total(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(network_total(&[vec![3.0; 4], vec![4.0; 4]]).unwrap(), vec![7.0; 4]);
        assert!(matches!(
            network_total(&[vec![1.0; 3], vec![1.0; 2]]),
            Err(MetricError::RaggedInput { building: 1, .. })
        ));
    }

    #[test]
    fn report_flags_and_serialization() {
        let r = MetricReport::compute(&[3.0, 4.0], &[3.0, 4.0]).unwrap();
        assert!(r.acceptable());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"snr_db\":\"inf\""), "{json}");
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_row("CNN_1", "electric", "test")[3], "inf");

        let poor = MetricReport::compute(&[3.0, 4.0], &[3.0, 3.0]).unwrap();
        // 13.98 dB clears the SNR bar but NRMSE 0.177 does not
        assert!(!poor.acceptable());
    }

    #[test]
    fn daily_breakdown() {
        let a: Vec<f64> = (0..96).map(|i| 1.0 + i as f64).collect();
        let mut p = a.clone();
        p[50] += 1.0;
        let days = per_day(&a, &p).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].snr_db, f64::INFINITY);
        assert!(days[1].snr_db.is_finite());
        let (snr, nr) = mean_of_daily(&days);
        assert_eq!(snr, Some(days[1].snr_db));
        assert!(nr.unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn nrmse_and_snr_scale_invariant(
            pairs in proptest::collection::vec((0.1f64..100.0, 0.0f64..100.0), 1..50),
            c in 0.01f64..100.0,
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (sa, sp): (Vec<f64>, Vec<f64>) = (a.iter().map(|x| x * c).collect(), p.iter().map(|x| x * c).collect());
            let base = nrmse(&ev(&a, &p)).unwrap();
            let scaled = nrmse(&ev(&sa, &sp)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
            let s0 = snr_db(&ev(&a, &p));
            let s1 = snr_db(&ev(&sa, &sp));
            if s0.is_finite() {
                prop_assert!((s0 - s1).abs() < 1e-9);
            }
        }

        #[test]
        fn snr_falls_as_error_grows(
            a in proptest::collection::vec(0.1f64..50.0, 2..30),
            k in 0usize..30,
            e1 in 0.01f64..5.0,
            extra in 0.01f64..5.0,
        ) {
            let i = k % a.len();
            let mut p1 = a.clone();
            p1[i] += e1;
            let mut p2 = a.clone();
            p2[i] += e1 + extra;
            prop_assert!(snr_db(&ev(&a, &p1)) > snr_db(&ev(&a, &p2)));
        }

        #[test]
        fn mape_counts_partition(
            pairs in proptest::collection::vec((prop_oneof![Just(0.0), 0.1f64..10.0], 0.0f64..10.0), 1..40),
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = mape_pct(&ev(&a, &p));
            prop_assert_eq!(m.included + m.excluded, a.len());
            if let Some(v) = m.value {
                prop_assert!(v >= 0.0);
            }
        }

        #[test]
        fn acceptability_matches_thresholds(
            pairs in proptest::collection::vec((0.1f64..10.0, 0.0f64..10.0), 1..20),
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = MetricReport::compute(&a, &p).unwrap();
            prop_assert_eq!(r.acceptable(), r.snr_db > 8.0 && r.nrmse.unwrap() < 0.15);
        }
    }
}
