//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Run alone with `cargo test -p mecnn-cli --test acceptance`.

#[path = "../../core/tests/common/gradcheck.rs"]
mod gradcheck;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use mecnn::arch::{build_cnn1, build_cnn2, ConvStack, FrameworkId};
use mecnn::data::{
    make_series_windows, split, split_ranges, synth_generate, EnergyVector, InputChannel, InputLayout, SplitMode,
    SplitSpec, SynthConfig,
};
use mecnn::featsel::{cross_building_correlation, sliding_mean_correlation};
use mecnn::fed::{fedavg, federated_train, FedConfig};
use mecnn::forecast::{fit_single, ArchOverride, ModelSetup};
use mecnn::metrics::{mape_pct, nrmse, snr_db, EvalSeries};
use mecnn::nn::{activation_shapes, LayerParams, Network};
use mecnn::optim::{iterations_per_epoch, minibatch_schedule, train, TrainConfig};
use mecnn::Shape4;
use mecnn_cli::config::{DataSource, ExperimentConfig};
use mecnn_cli::experiment::run_experiment;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs `f(seed)` for every seed on all cores, keeping seed order.
fn par_seeds<T: Send>(seeds: std::ops::Range<u64>, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let seeds: Vec<u64> = seeds.collect();
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    let chunk = seeds.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(|&seed| f(seed)).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn gradient_oracle() -> Outcome {
    const TOL: f64 = 1e-4;
    const CASES: u64 = 100;
    let start = Instant::now();
    let kinds: [(&str, fn(u64) -> f64); 6] = [
        ("conv", gradcheck::conv_case),
        ("batchnorm", gradcheck::batchnorm_case),
        ("relu", gradcheck::relu_case),
        ("avgpool", gradcheck::avgpool_case),
        ("fc", gradcheck::dense_case),
        ("mse", gradcheck::mse_case),
    ];
    let mut report = Vec::new();
    for (name, case) in kinds {
        let worst = par_seeds(0..CASES, case).into_iter().fold(0.0, f64::max);
        ensure(worst < TOL, || format!("{name}: max relative error {worst:.3e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    let nets = [
        ("CNN_6-local", ConvStack::cnn6_local(), 8),
        ("CNN_1 8x7", ConvStack::cnn1().with_filters(8).with_kernel(7), 24),
    ];
    for (name, stack, per_buffer) in nets {
        let worst = par_seeds(0..CASES, |s| gradcheck::network_case(&stack, s, 3, per_buffer))
            .into_iter()
            .fold(0.0, f64::max);
        ensure(worst < TOL, || format!("{name}: max relative error {worst:.3e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} ({:.1}s)", report.join(", "), elapsed.as_secs_f64()))
}

fn shape_conformance() -> Outcome {
    let dims = |s: &Shape4| (s.h, s.w, s.c, s.n);
    let cnn1: Vec<_> = activation_shapes(&build_cnn1()).unwrap().iter().map(dims).collect();
    let mut expected = vec![(48, 1, 1, 1)];
    for (h, pooled) in [(48, 12), (12, 3), (3, 1)] {
        expected.extend([(h, 1, 136, 1); 3]);
        expected.push((pooled, 1, 136, 1));
    }
    expected.extend([(1, 1, 1, 1), (1, 1, 1, 1)]);
    ensure(cnn1 == expected, || format!("CNN_1 activations {cnn1:?}"))?;

    let spec2 = build_cnn2(3).unwrap();
    let cnn2: Vec<_> = activation_shapes(&spec2).unwrap().iter().map(dims).collect();
    let mut expected2 = vec![(48, 3, 1, 1)];
    expected2.extend([(48, 3, 30, 1); 12]);
    expected2.extend([(1, 1, 1, 1), (1, 1, 1, 1)]);
    ensure(cnn2 == expected2, || format!("CNN_2 activations {cnn2:?}"))?;

    let net = Network::new(spec2, 0);
    let fc = net
        .params()
        .iter()
        .rev()
        .find_map(|p| match p {
            Some(LayerParams::Dense { weights, .. }) => Some(weights.shape()),
            _ => None,
        })
        .unwrap();
    ensure((fc.n, fc.w) == (1, 4320), || format!("CNN_2 FC weights {fc:?}"))?;
    let conv1 = match &net.params()[1] {
        Some(LayerParams::Conv { weights, .. }) => weights.shape(),
        _ => return Err("CNN_2 layer 2 is not a convolution".into()),
    };
    ensure(dims(&conv1) == (100, 1, 1, 30), || format!("CNN_2 conv_1 weights {conv1:?}"))?;
    Ok("CNN_1 48->12->3->1 x136, CNN_2 48x3x30, FC 1x4320".into())
}

fn iteration_accounting() -> Outcome {
    let per_epoch = iterations_per_epoch(2928, 700);
    let schedule = minibatch_schedule(2928, 700, 0, 0).map_err(|e| e.to_string())?;
    ensure(per_epoch == 4 && schedule.len() == 4, || {
        format!("{per_epoch} / {} iterations per epoch", schedule.len())
    })?;
    ensure(schedule.iter().all(|b| b.len() == 700), || "batch sizes differ from 700".into())?;
    let total: usize = (0..400)
        .map(|e| minibatch_schedule(2928, 700, 0, e).map(|s| s.len()))
        .sum::<Result<usize, _>>()
        .map_err(|e| e.to_string())?;
    ensure(total == 1600, || format!("{total} iterations over 400 epochs"))?;
    Ok("4 iterations/epoch, 1600 over 400 epochs".into())
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = rng.gen_range(1..200);
        let actual: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.01..50.0) })
            .collect();
        let predicted: Vec<f64> = actual.iter().map(|a| a + rng.gen_range(-5.0..5.0)).collect();
        // brute force, term by term
        let mut se = 0.0;
        let mut sig = 0.0;
        let mut max = f64::MIN;
        let mut ape = 0.0;
        let mut nz = 0usize;
        for k in 0..n {
            let d = predicted[k] - actual[k];
            se += d * d;
            sig += actual[k] * actual[k];
            if actual[k] > max {
                max = actual[k];
            }
            if actual[k] != 0.0 {
                ape += (d / actual[k]).abs();
                nz += 1;
            }
        }
        let e = EvalSeries::new(&actual, &predicted).map_err(|e| e.to_string())?;
        let mut check = |name: &str, got: f64, want: f64| -> Result<(), String> {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("case {i}: {name} {got} vs {want}"))
        };
        if max > 0.0 {
            check("nrmse", nrmse(&e).map_err(|e| e.to_string())?, (se / n as f64).sqrt() / max)?;
        }
        if sig > 0.0 && se > 0.0 {
            check("snr", snr_db(&e), 10.0 * (sig / se).log10())?;
        }
        let m = mape_pct(&e);
        ensure(m.excluded == n - nz, || format!("case {i}: excluded {}", m.excluded))?;
        if nz > 0 {
            check("mape", m.value.unwrap_or(f64::NAN), 100.0 * ape / nz as f64)?;
        }
    }
    let snr = snr_db(&EvalSeries::new(&[3.0, 4.0], &[3.0, 3.0]).unwrap());
    ensure((snr - 13.9794).abs() <= 1e-4, || format!("snr_db([3,4] vs [3,3]) = {snr}"))?;
    let nr = nrmse(&EvalSeries::new(&[2.0, 4.0], &[2.0, 2.0]).unwrap()).unwrap();
    ensure((nr - 0.353553).abs() <= 1e-6, || format!("nrmse([2,4] vs [2,2]) = {nr}"))?;
    Ok(format!("1000 series, max error {worst:.1e}; snr {snr:.4} dB, nrmse {nr:.6}"))
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let results = par_seeds(0..10, |seed| -> Result<(f64, f64), String> {
        let ds = synth_generate(
            &SynthConfig {
                num_days: 30,
                ..SynthConfig::default()
            },
            seed,
        )
        .map_err(|e| e.to_string())?;
        let b = ds.nonzero_buildings(EnergyVector::Electric)[0];
        let setup = ModelSetup {
            framework: FrameworkId::Cnn1,
            arch: ArchOverride {
                filters: Some(8),
                kernel: Some(7),
                blocks: Some(2),
            },
            train: TrainConfig {
                max_epochs: 100,
                batch_size: 64,
                shuffle_seed: seed,
                ..TrainConfig::default()
            },
            init_seed: seed,
            minmax: false,
        };
        let f = fit_single(
            &ds,
            b,
            EnergyVector::Electric,
            vec![InputChannel::Energy(EnergyVector::Electric)],
            SplitSpec::train_test(),
            &setup,
        )
        .map_err(|e| e.to_string())?;
        let e = EvalSeries::new(&f.test.actual[0], &f.test.predicted[0]).map_err(|e| e.to_string())?;
        Ok((snr_db(&e), nrmse(&e).map_err(|e| e.to_string())?))
    });
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_, _>>()?;
    let good = results.iter().filter(|(s, n)| *s > 8.0 && *n < 0.15).count();
    let elapsed = start.elapsed();
    let worst_snr = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let worst_nrmse = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let summary = format!(
        "{good}/10 seeds acceptable, worst SNR {worst_snr:.1} dB, worst NRMSE {worst_nrmse:.3} ({:.0}s)",
        elapsed.as_secs_f64()
    );
    ensure(good >= 9, || summary.clone())?;
    ensure(elapsed < Duration::from_secs(600), || summary.clone())?;
    Ok(summary)
}

/// Mean test SNR of the network total per vector, over five data seeds.
/// Each vector is modelled with CNN_1 on the first non-zero buildings of
/// the default generator.
fn difficulty_ordering() -> Outcome {
    const BUILDINGS: usize = 2;
    let start = Instant::now();
    let jobs: Vec<(u64, EnergyVector, usize)> = (0..5u64)
        .flat_map(|s| EnergyVector::ALL.into_iter().flat_map(move |v| (0..BUILDINGS).map(move |k| (s, v, k))))
        .collect();
    let datasets: Vec<_> = (0..5u64)
        .map(|s| synth_generate(&SynthConfig::default(), s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let fitted = par_seeds(0..jobs.len() as u64, |j| -> Result<(Vec<f64>, Vec<f64>), String> {
        let (seed, v, k) = jobs[j as usize];
        let ds = &datasets[seed as usize];
        let b = ds.nonzero_buildings(v)[k];
        let setup = ModelSetup {
            framework: FrameworkId::Cnn1,
            arch: ArchOverride {
                filters: Some(8),
                kernel: Some(7),
                blocks: Some(2),
            },
            train: TrainConfig {
                max_epochs: 20,
                batch_size: 128,
                shuffle_seed: seed,
                ..TrainConfig::default()
            },
            init_seed: seed,
            minmax: false,
        };
        let f = fit_single(ds, b, v, vec![InputChannel::Energy(v)], SplitSpec::train_test(), &setup)
            .map_err(|e| e.to_string())?;
        Ok((f.test.actual[0].clone(), f.test.predicted[0].clone()))
    });
    let fitted: Vec<_> = fitted.into_iter().collect::<Result<_, _>>()?;
    let mut mean = [0.0; 3];
    for seed in 0..5u64 {
        for v in EnergyVector::ALL {
            let parts: Vec<&(Vec<f64>, Vec<f64>)> = jobs
                .iter()
                .zip(&fitted)
                .filter(|((s, u, _), _)| *s == seed && *u == v)
                .map(|(_, f)| f)
                .collect();
            let sum = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
                (0..pick(parts[0]).len()).map(|t| parts.iter().map(|p| pick(p)[t]).sum()).collect()
            };
            let (a, p) = (sum(|x| &x.0), sum(|x| &x.1));
            mean[v.index()] += snr_db(&EvalSeries::new(&a, &p).map_err(|e| e.to_string())?) / 5.0;
        }
    }
    let summary = format!(
        "mean test SNR electric {:.1} > heat {:.1} > gas {:.1} dB ({:.0}s)",
        mean[0],
        mean[1],
        mean[2],
        start.elapsed().as_secs_f64()
    );
    ensure(mean[0] > mean[1] && mean[1] > mean[2], || summary.clone())?;
    Ok(summary)
}

fn fed_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let k = rng.gen_range(1..8);
        let len = rng.gen_range(1..50);
        let locals: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect())
            .collect();
        let refs: Vec<&[f64]> = locals.iter().map(Vec::as_slice).collect();
        let avg = fedavg(&refs).map_err(|e| e.to_string())?;
        let mut perm = refs.clone();
        perm.shuffle(&mut rng);
        ensure(fedavg(&perm).map_err(|e| e.to_string())? == avg, || "fedavg depends on node order".into())?;
        let same = vec![refs[0]; k];
        ensure(fedavg(&same).map_err(|e| e.to_string())? == refs[0], || "fedavg moves a fixed point".into())?;
    }

    let stack = ConvStack::cnn6_local().with_filters(4).with_kernel(9);
    let spec = stack.build().map_err(|e| e.to_string())?;
    let series = |seed: u64| {
        let s: Vec<f64> = (0..4 * 48)
            .map(|t| 3.0 + (t as f64 * std::f64::consts::TAU / 48.0 + seed as f64).sin() + 0.05 * (t % 3) as f64)
            .collect();
        make_series_windows(&s).unwrap()
    };
    let cfg = TrainConfig {
        max_epochs: 4,
        batch_size: 32,
        shuffle_seed: 5,
        ..TrainConfig::default()
    };
    let data = series(1);
    let fed = federated_train(&spec, 3, std::slice::from_ref(&data), &cfg, &FedConfig::default())
        .map_err(|e| e.to_string())?;
    let mut central = Network::new(spec.clone(), 3);
    train(&mut central, &data, None, &cfg).map_err(|e| e.to_string())?;
    ensure(
        fed.global.flat_weights() == central.flat_weights()
            && fed.global.flat_running_stats() == central.flat_running_stats(),
        || "N=1 federated training differs from centralized training".into(),
    )?;

    let nodes = vec![series(2), series(2), series(2), series(2)];
    let fed = federated_train(&spec, 8, &nodes, &cfg, &FedConfig::default()).map_err(|e| e.to_string())?;
    let rounds = fed.round_log.iter().map(|r| r.round).max().unwrap_or(0);
    let worst = fed
        .round_log
        .iter()
        .map(|r| r.post_avg_delta_norm.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-12, || format!("local/global distance {worst:e}"))?;
    for l in &fed.locals {
        ensure(l.flat_weights() == fed.global.flat_weights(), || "final local differs from global".into())?;
    }
    Ok(format!("permutation/fixed point exact, N=1 bitwise, {rounds} symmetric rounds with delta 0"))
}

fn determinism() -> Outcome {
    let run = |dir: &Path| -> Result<(), String> {
        let cfg = ExperimentConfig {
            output_dir: dir.to_path_buf(),
            seed: 11,
            frameworks: vec![
                FrameworkId::Cnn1,
                FrameworkId::Cnn2,
                FrameworkId::Cnn3,
                FrameworkId::Cnn4,
                FrameworkId::Cnn5,
                FrameworkId::Cnn6,
            ],
            data: DataSource::Synth {
                seed: 6,
                synth: SynthConfig {
                    num_days: 15,
                    num_buildings: 6,
                    zero_electric: 1,
                    zero_heat: 2,
                    zero_gas: 2,
                    low_gas: 1,
                    ..SynthConfig::default()
                },
            },
            split: SplitSpec::train_val_test(),
            train: TrainConfig {
                max_epochs: 3,
                batch_size: 64,
                ..TrainConfig::default()
            },
            arch: ArchOverride {
                filters: Some(4),
                kernel: Some(7),
                blocks: None,
            },
            fed: mecnn_cli::config::FedOptions {
                num_nodes: 4,
                ..Default::default()
            },
            threads: 4,
            save_models: false,
            ..ExperimentConfig::default()
        };
        run_experiment(&cfg, Path::new(".")).map(|_| ()).map_err(|e| e.to_string())
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run(a.path())?;
    run(b.path())?;
    let mut names: Vec<String> = fs::read_dir(a.path())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n == "metrics.csv" || n.starts_with("predictions_"))
        .collect();
    names.sort();
    ensure(names.len() > 30, || format!("only {} files", names.len()))?;
    for n in &names {
        let (x, y) = (fs::read(a.path().join(n)), fs::read(b.path().join(n)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || format!("{n} differs between runs"))?;
    }
    Ok(format!("{} metrics/prediction CSVs byte-identical across reruns", names.len()))
}

fn correlation_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let window = rng.gen_range(2..30);
        let step = rng.gen_range(1..30);
        let n = rng.gen_range(window..200);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.gen_range(-2.0..2.0)).collect();
        // brute force: Pearson per block from raw sums
        let mut acc = Vec::new();
        let mut s = 0;
        while s + window <= n {
            let (bx, by) = (&x[s..s + window], &y[s..s + window]);
            let w = window as f64;
            let (sx, sy) = (bx.iter().sum::<f64>(), by.iter().sum::<f64>());
            let (mx, my) = (sx / w, sy / w);
            let cov: f64 = (0..window).map(|k| (bx[k] - mx) * (by[k] - my)).sum();
            let vx: f64 = (0..window).map(|k| (bx[k] - mx).powi(2)).sum();
            let vy: f64 = (0..window).map(|k| (by[k] - my).powi(2)).sum();
            acc.push(cov / (vx * vy).sqrt());
            s += step;
        }
        let want = acc.iter().sum::<f64>() / acc.len() as f64;
        let got = sliding_mean_correlation(&x, &y, window, step)
            .map_err(|e| e.to_string())?
            .ok_or("undefined correlation")?;
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;

    let mut pairs = Vec::new();
    for seed in 0..5 {
        let ds = synth_generate(&SynthConfig::default(), seed).map_err(|e| e.to_string())?;
        let mean = |v| -> Result<f64, String> {
            cross_building_correlation(&ds, v, 0..ds.len())
                .map_err(|e| e.to_string())?
                .off_diagonal_mean()
                .ok_or_else(|| format!("no defined {v} pairs"))
        };
        let (e, g) = (mean(EnergyVector::Electric)?, mean(EnergyVector::Gas)?);
        ensure(e > g, || format!("seed {seed}: electric {e:.3} <= gas {g:.3}"))?;
        pairs.push(format!("{e:.2}/{g:.2}"));
    }
    Ok(format!(
        "block Pearson max deviation {worst:.1e}; electric/gas off-diagonal means {}",
        pairs.join(" ")
    ))
}

fn no_leakage() -> Outcome {
    let mut checked = 0;
    for days in [9, 15, 30, 61, 90, 120] {
        let ds = synth_generate(
            &SynthConfig {
                num_days: days,
                num_buildings: 3,
                zero_electric: 0,
                zero_heat: 0,
                zero_gas: 0,
                low_gas: 0,
                ..SynthConfig::default()
            },
            days as u64,
        )
        .map_err(|e| e.to_string())?;
        for mode in [SplitMode::TrainTest, SplitMode::TrainValTest] {
            for calendar_months in [false, true] {
                let spec = SplitSpec { mode, calendar_months };
                if split_ranges(&ds, spec).is_err() {
                    continue;
                }
                let layout = InputLayout::SingleBuilding {
                    building: 0,
                    target: EnergyVector::Electric,
                    channels: vec![InputChannel::Energy(EnergyVector::Electric)],
                };
                let p = split(&ds, &layout, spec).map_err(|e| e.to_string())?;
                let train_max = p.train.target_index.iter().max().copied().unwrap_or(0);
                let later = |idx: &[usize]| idx.iter().all(|&t| t > train_max);
                ensure(later(&p.test.target_index), || {
                    format!("{days} days {spec:?}: test target at or before a training target")
                })?;
                if let Some(v) = &p.validation {
                    let val_max = v.target_index.iter().max().copied().unwrap_or(0);
                    ensure(later(&v.target_index) && p.test.target_index.iter().all(|&t| t > val_max), || {
                        format!("{days} days {spec:?}: validation overlaps")
                    })?;
                }
                checked += 1;
            }
        }
    }
    ensure(checked >= 16, || format!("only {checked} split configurations checked"))?;
    Ok(format!("{checked} dataset/split combinations"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient oracle", gradient_oracle),
        ("shape conformance", shape_conformance),
        ("iteration accounting", iteration_accounting),
        ("metric oracles", metric_oracles),
        ("learnability", learnability),
        ("relative-difficulty ordering", difficulty_ordering),
        ("FedAvg invariants", fed_invariants),
        ("determinism", determinism),
        ("correlation engine", correlation_engine),
        ("no leakage", no_leakage),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS  criterion {:>2} {name}: {detail}", i + 1),
            Ok(Err(detail)) => {
                failed += 1;
                println!("FAIL  criterion {:>2} {name}: {detail}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  criterion {:>2} {name}: panicked", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
