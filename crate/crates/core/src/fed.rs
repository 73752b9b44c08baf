//! Average federated learning across the nodes of an energy network.
//!
//! Every node trains its own copy of one architecture on its own windows
//! with its own Adam state. After every `sync_period` local iterations the
//! coordinator replaces each participating node's weights with the
//! elementwise mean and broadcasts it back. Batch-norm running statistics
//! and the zero-center input mean travel with the weights so that the
//! averaged network is a complete, usable model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EnergyVector, MultiEnergyDataset, WindowSet};
use crate::nn::{Network, NetworkSpec, NnError};
use crate::optim::{OptimError, TrainConfig, TrainHistory, Trainer};
use crate::tensor::Tensor4;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("no weight vectors to average")]
    EmptyList,
    #[error("weight vector {index} has length {found}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("every node was excluded: none holds a full mini-batch")]
    NoEligibleNodes,
    #[error("node {node}: {source}")]
    Node { node: usize, source: OptimError },
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn check_lengths(locals: &[&[f64]]) -> Result<usize, FedError> {
    let first = locals.first().ok_or(FedError::EmptyList)?;
    let len = first.len();
    for (index, l) in locals.iter().enumerate() {
        if l.len() != len {
            return Err(FedError::LengthMismatch {
                index,
                expected: len,
                found: l.len(),
            });
        }
    }
    Ok(len)
}

/// Unweighted elementwise mean. Each coordinate is summed in sorted order,
/// so the result does not depend on the order of `locals`, and identical
/// inputs are returned unchanged.
pub fn fedavg(locals: &[&[f64]]) -> Result<Vec<f64>, FedError> {
    let len = check_lengths(locals)?;
    let n = locals.len() as f64;
    let mut column = Vec::with_capacity(locals.len());
    Ok((0..len)
        .map(|i| {
            column.clear();
            column.extend(locals.iter().map(|l| l[i]));
            if column.iter().all(|&x| x.to_bits() == column[0].to_bits()) {
                return column[0];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect())
}

/// Mean weighted by `weights` (for instance, sample counts).
pub fn fedavg_weighted(locals: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>, FedError> {
    let len = check_lengths(locals)?;
    if weights.len() != locals.len() {
        return Err(FedError::LengthMismatch {
            index: weights.len(),
            expected: locals.len(),
            found: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(locals.len());
    Ok((0..len)
        .map(|i| {
            column.clear();
            column.extend(locals.iter().zip(weights).map(|(l, &w)| (l[i], w)));
            if column.iter().all(|&(x, _)| x.to_bits() == column[0].0.to_bits()) {
                return column[0].0;
            }
            column.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            column.iter().map(|(x, w)| x * w).sum::<f64>() / total
        })
        .collect())
}

fn default_sync() -> Option<usize> {
    Some(1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Local iterations between averaging rounds; `None` disables
    /// averaging entirely.
    #[serde(default = "default_sync")]
    pub sync_period: Option<usize>,
    /// Weight each node by its number of training windows.
    #[serde(default)]
    pub sample_weighted: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            sync_period: default_sync(),
            sample_weighted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub node_id: usize,
    pub local_loss: f64,
    /// L2 distance between the node's weights before averaging and the
    /// average; absent when no averaging took place.
    pub post_avg_delta_norm: Option<f64>,
}

pub fn write_round_log<W: std::io::Write>(log: &[RoundRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["round", "node_id", "local_loss", "post_avg_delta_norm"])?;
    for r in log {
        w.write_record([
            r.round.to_string(),
            r.node_id.to_string(),
            r.local_loss.to_string(),
            r.post_avg_delta_norm.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FedOutcome {
    /// Average of the participating nodes' final states.
    pub global: Network,
    /// Final local networks, one per node (excluded nodes keep the
    /// initial network).
    pub locals: Vec<Network>,
    pub histories: Vec<TrainHistory>,
    pub round_log: Vec<RoundRecord>,
    /// Nodes holding fewer windows than one mini-batch.
    pub excluded: Vec<usize>,
}

/// Everything the coordinator averages, flattened per node.
struct NodeState {
    weights: Vec<f64>,
    stats: Vec<f64>,
    mean: Option<Vec<f64>>,
}

fn state_of(net: &Network) -> NodeState {
    NodeState {
        weights: net.flat_weights(),
        stats: net.flat_running_stats(),
        mean: net.input_mean().map(|m| m.data().to_vec()),
    }
}

fn average(nets: &[&Network], weights: Option<&[f64]>) -> Result<NodeState, FedError> {
    let states: Vec<NodeState> = nets.iter().map(|n| state_of(n)).collect();
    let avg = |pick: &dyn Fn(&NodeState) -> &[f64]| -> Result<Vec<f64>, FedError> {
        let cols: Vec<&[f64]> = states.iter().map(pick).collect();
        match weights {
            Some(w) => fedavg_weighted(&cols, w),
            None => fedavg(&cols),
        }
    };
    let mean = if states.iter().all(|s| s.mean.is_some()) {
        Some(avg(&|s| s.mean.as_deref().unwrap_or_default())?)
    } else {
        None
    };
    Ok(NodeState {
        weights: avg(&|s| &s.weights)?,
        stats: avg(&|s| &s.stats)?,
        mean,
    })
}

fn apply(net: &mut Network, state: &NodeState) -> Result<(), NnError> {
    net.set_flat_weights(&state.weights)?;
    net.set_flat_running_stats(&state.stats)?;
    if let Some(m) = &state.mean {
        let shape = net.spec().input_shape();
        net.set_input_mean(Tensor4::from_vec(shape, m.clone())?)?;
    }
    Ok(())
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Trains one network per node from a shared seeded initialisation and
/// averages them every `sync_period` iterations until each node has spent
/// `cfg.max_epochs` epochs. All nodes share `cfg.shuffle_seed`.
pub fn federated_train(
    spec: &NetworkSpec,
    init_seed: u64,
    nodes: &[WindowSet],
    cfg: &TrainConfig,
    fed: &FedConfig,
) -> Result<FedOutcome, FedError> {
    let base = Network::new(spec.clone(), init_seed);
    let mut locals: Vec<Network> = vec![base.clone(); nodes.len()];
    let mut trainers: Vec<Option<Trainer>> = Vec::with_capacity(nodes.len());
    let mut excluded = Vec::new();
    for (id, (net, data)) in locals.iter_mut().zip(nodes).enumerate() {
        match Trainer::new(net, data, None, cfg) {
            Ok(t) => trainers.push(Some(t)),
            Err(OptimError::BatchLargerThanDataset { .. }) => {
                excluded.push(id);
                trainers.push(None);
            }
            Err(source) => return Err(FedError::Node { node: id, source }),
        }
    }
    let active: Vec<usize> = (0..nodes.len()).filter(|i| trainers[*i].is_some()).collect();
    if active.is_empty() {
        return Err(FedError::NoEligibleNodes);
    }
    let sample_weights: Vec<f64> = nodes.iter().map(|n| n.len() as f64).collect();
    let weights_for = |ids: &[usize]| -> Option<Vec<f64>> {
        fed.sample_weighted
            .then(|| ids.iter().map(|&i| sample_weights[i]).collect())
    };

    // broadcast a common starting point, including the averaged input mean
    if cfg.max_epochs > 0 && fed.sync_period.is_some() {
        let refs: Vec<&Network> = active.iter().map(|&i| &locals[i]).collect();
        let start = average(&refs, weights_for(&active).as_deref())?;
        for &i in &active {
            apply(&mut locals[i], &start)?;
        }
    }

    let period = fed.sync_period.unwrap_or(usize::MAX).max(1);
    let mut round_log = Vec::new();
    let mut round = 0;
    loop {
        let participants: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| trainers[i].as_ref().is_some_and(|t| !t.is_finished()))
            .collect();
        if participants.is_empty() {
            break;
        }
        round += 1;
        for &i in &participants {
            let trainer = trainers[i].as_mut().expect("active node");
            for _ in 0..period {
                match trainer.step(&mut locals[i]) {
                    Ok(Some(_)) => {}
                    Ok(None) => break,
                    Err(source) => return Err(FedError::Node { node: i, source }),
                }
            }
        }
        let deltas: Vec<Option<f64>> = if fed.sync_period.is_some() {
            let refs: Vec<&Network> = participants.iter().map(|&i| &locals[i]).collect();
            let avg = average(&refs, weights_for(&participants).as_deref())?;
            let mut d = Vec::with_capacity(participants.len());
            for &i in &participants {
                d.push(Some(l2_distance(&locals[i].flat_weights(), &avg.weights)));
                apply(&mut locals[i], &avg)?;
            }
            d
        } else {
            vec![None; participants.len()]
        };
        for (&i, delta) in participants.iter().zip(deltas) {
            round_log.push(RoundRecord {
                round,
                node_id: i,
                local_loss: trainers[i].as_ref().map_or(f64::NAN, Trainer::last_loss),
                post_avg_delta_norm: delta,
            });
        }
    }

    let refs: Vec<&Network> = active.iter().map(|&i| &locals[i]).collect();
    let final_state = average(&refs, weights_for(&active).as_deref())?;
    let mut global = locals[active[0]].clone();
    apply(&mut global, &final_state)?;
    let histories = trainers
        .into_iter()
        .map(|t| t.map(|t| t.finish().0).unwrap_or_default())
        .collect();
    Ok(FedOutcome {
        global,
        locals,
        histories,
        round_log,
        excluded,
    })
}

/// Buildings assigned to `num_nodes` federated nodes for one vector.
/// Buildings with a zero series are skipped; when every remaining building
/// carries a network node id they are ordered by it, otherwise by position.
/// Buildings are reused round-robin if there are more nodes than buildings.
pub fn assign_nodes(ds: &MultiEnergyDataset, vector: EnergyVector, num_nodes: usize) -> Vec<usize> {
    let mut active = ds.nonzero_buildings(vector);
    if active.is_empty() {
        return Vec::new();
    }
    if active.iter().all(|&b| ds.building(b).nodes[vector.index()].is_some()) {
        active.sort_by_key(|&b| ds.building(b).nodes[vector.index()]);
    }
    (0..num_nodes).map(|i| active[i % active.len()]).collect()
}
