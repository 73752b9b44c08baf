//! Adam, gradient clipping, the mini-batch schedule and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WindowSet;
use crate::nn::{mse_loss, mse_loss_grad, Gradients, Mode, Network, NnError};
use crate::tensor::Tensor4;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter/gradient shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch size {batch} exceeds the {n} available samples")]
    BatchLargerThanDataset { n: usize, batch: usize },
    #[error("non-finite loss or gradient at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: usize, iteration: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(buffer_lens: &[usize], learning_rate: f64) -> Self {
        Self {
            m: buffer_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: buffer_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn for_network(net: &Network, learning_rate: f64) -> Self {
        let lens: Vec<usize> = net.learnables().iter().map(|b| b.len()).collect();
        Self::new(&lens, learning_rate)
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState) -> Result<(), OptimError> {
    let shapes_agree = params.len() == grads.len()
        && params.len() == state.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_agree {
        return Err(OptimError::ShapeMismatch(format!(
            "{} parameter buffers, {} gradient buffers, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `threshold`.
/// An infinite threshold leaves them untouched.
pub fn clip_gradients(grads: &mut Gradients, threshold: f64) {
    if !threshold.is_finite() {
        return;
    }
    let norm = grads.l2_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.tensors.iter_mut().flatten() {
            *g *= scale;
        }
    }
}

pub fn iterations_per_epoch(n_samples: usize, batch_size: usize) -> usize {
    if batch_size == 0 {
        0
    } else {
        n_samples / batch_size
    }
}

/// Shuffled index batches for one epoch. The shuffle is a function of
/// `(seed, epoch)` only, and a trailing partial batch is dropped.
pub fn minibatch_schedule(
    n_samples: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, OptimError> {
    if batch_size == 0 {
        return Err(OptimError::InvalidConfig("batch size must be at least 1".into()));
    }
    let iters = iterations_per_epoch(n_samples, batch_size);
    if iters == 0 {
        return Err(OptimError::BatchLargerThanDataset {
            n: n_samples,
            batch: batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks_exact(batch_size)
        .take(iters)
        .map(<[usize]>::to_vec)
        .collect())
}

fn default_log_every() -> usize {
    50
}

fn default_threshold() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_threshold")]
    pub gradient_threshold: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            batch_size: 700,
            learning_rate: 0.01,
            gradient_threshold: f64::INFINITY,
            shuffle_seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.batch_size == 0 {
            return Err(OptimError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimError::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        if !(self.gradient_threshold > 0.0) {
            return Err(OptimError::InvalidConfig("gradient_threshold must be positive or inf".into()));
        }
        if self.log_every == 0 {
            return Err(OptimError::InvalidConfig("log_every must be positive".into()));
        }
        Ok(())
    }

    /// Whether the end of `epoch` (1-based) is a history point.
    pub fn is_log_epoch(&self, epoch: usize) -> bool {
        epoch == 1 || epoch.is_multiple_of(self.log_every) || epoch == self.max_epochs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub iteration: usize,
    pub elapsed_seconds: f64,
    pub minibatch_rmse: f64,
    pub validation_rmse: Option<f64>,
    pub minibatch_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub const HEADER: [&'static str; 7] = [
        "Epoch",
        "Iteration",
        "ElapsedSeconds",
        "MinibatchRMSE",
        "ValidationRMSE",
        "MinibatchLoss",
        "ValidationLoss",
    ];

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    /// The same history with wall-clock time zeroed, for reproducibility
    /// comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| HistoryRow {
                    elapsed_seconds: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::HEADER)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.iteration.to_string(),
                format!("{:.3}", r.elapsed_seconds),
                r.minibatch_rmse.to_string(),
                opt(r.validation_rmse),
                r.minibatch_loss.to_string(),
                opt(r.validation_loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[derive(Clone, Copy, Debug)]
struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

/// What a single optimisation step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based epoch the step belongs to.
    pub epoch: usize,
    /// 1-based global iteration count after the step.
    pub iteration: usize,
    pub loss: f64,
    pub epoch_finished: bool,
}

/// Best validation point seen during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub validation_loss: f64,
    pub net: Network,
}

/// Mini-batch training driven one iteration at a time. [`train`] runs it to
/// completion; federated training interleaves several of them.
#[derive(Debug)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a WindowSet,
    validation: Option<&'a WindowSet>,
    adam: AdamState,
    iters_per_epoch: usize,
    epoch: usize,
    iteration: usize,
    schedule: Vec<Vec<usize>>,
    last_loss: f64,
    history: TrainHistory,
    best: Option<Snapshot>,
    clock: Clock,
}

impl<'a> Trainer<'a> {
    /// Validates the configuration against the data and stores the
    /// zero-center statistic of the training inputs in `net`.
    pub fn new(
        net: &mut Network,
        data: &'a WindowSet,
        validation: Option<&'a WindowSet>,
        cfg: &TrainConfig,
    ) -> Result<Self, OptimError> {
        cfg.validate()?;
        let expected = net.spec().input_shape();
        for set in std::iter::once(data).chain(validation) {
            if set.inputs.shape().with_batch(1) != expected || set.outputs != net.spec().output_len() {
                return Err(OptimError::Nn(NnError::ShapeMismatch {
                    layer: 1,
                    expected: expected.with_batch(set.len()),
                    found: set.inputs.shape(),
                }));
            }
        }
        let iters_per_epoch = iterations_per_epoch(data.len(), cfg.batch_size);
        if cfg.max_epochs > 0 && iters_per_epoch == 0 {
            return Err(OptimError::BatchLargerThanDataset {
                n: data.len(),
                batch: cfg.batch_size,
            });
        }
        if cfg.max_epochs > 0 {
            net.set_input_mean(data.inputs.batch_mean())?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            data,
            validation,
            adam: AdamState::for_network(net, cfg.learning_rate),
            iters_per_epoch,
            epoch: 0,
            iteration: 0,
            schedule: Vec::new(),
            last_loss: f64::NAN,
            history: TrainHistory::default(),
            best: None,
            clock: Clock::start(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.iters_per_epoch
    }

    pub fn total_iterations(&self) -> usize {
        self.iters_per_epoch * self.cfg.max_epochs
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// Runs one forward/backward/clip/update iteration. Returns `None` once
    /// the epoch budget is spent. On a non-finite loss or gradient the
    /// network keeps the parameters and statistics it had before the step.
    pub fn step(&mut self, net: &mut Network) -> Result<Option<StepReport>, OptimError> {
        if self.is_finished() {
            return Ok(None);
        }
        let pos = self.iteration % self.iters_per_epoch;
        if pos == 0 {
            self.schedule = minibatch_schedule(self.data.len(), self.cfg.batch_size, self.cfg.shuffle_seed, self.epoch)?;
        }
        let epoch = self.epoch + 1;
        let (inputs, targets) = self
            .data
            .batch(&self.schedule[pos])
            .map_err(|e| OptimError::InvalidConfig(e.to_string()))?;

        let stats_before = net.flat_running_stats();
        let (pred, cache) = net.forward(&inputs, Mode::Train)?;
        let loss = mse_loss(pred.data(), &targets)?;
        let grad = Tensor4::from_vec(pred.shape(), mse_loss_grad(pred.data(), &targets)?)?;
        let mut grads = net.backward(&cache, &grad)?;
        clip_gradients(&mut grads, self.cfg.gradient_threshold);
        let finite = loss.is_finite() && grads.tensors.iter().flatten().all(|g| g.is_finite());
        if !finite {
            net.set_flat_running_stats(&stats_before)?;
            return Err(OptimError::NonFiniteLoss {
                epoch,
                iteration: self.iteration + 1,
            });
        }
        adam_step(&mut net.learnables_mut(), &grads.tensors, &mut self.adam)?;

        self.iteration += 1;
        self.last_loss = loss;
        let epoch_finished = self.iteration.is_multiple_of(self.iters_per_epoch);
        if epoch_finished {
            self.epoch = epoch;
            if self.cfg.is_log_epoch(epoch) {
                self.log(net)?;
            }
        }
        Ok(Some(StepReport {
            epoch,
            iteration: self.iteration,
            loss,
            epoch_finished,
        }))
    }

    fn log(&mut self, net: &Network) -> Result<(), OptimError> {
        let validation_loss = match self.validation {
            Some(v) => {
                let pred = net.predict_all(&v.inputs, 512)?;
                Some(mse_loss(&pred, &v.targets)?)
            }
            None => None,
        };
        if let Some(vl) = validation_loss {
            if self.best.as_ref().is_none_or(|b| vl < b.validation_loss) {
                self.best = Some(Snapshot {
                    epoch: self.epoch,
                    validation_loss: vl,
                    net: net.clone(),
                });
            }
        }
        self.history.rows.push(HistoryRow {
            epoch: self.epoch,
            iteration: self.iteration,
            elapsed_seconds: self.clock.elapsed(),
            minibatch_rmse: self.last_loss.sqrt(),
            validation_rmse: validation_loss.map(f64::sqrt),
            minibatch_loss: self.last_loss,
            validation_loss,
        });
        Ok(())
    }

    pub fn finish(self) -> (TrainHistory, Option<Snapshot>) {
        (self.history, self.best)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// Lowest-validation-loss snapshot, when a validation set was given.
    pub best: Option<Snapshot>,
}

/// Trains `net` in place for `cfg.max_epochs` epochs. The final network is
/// the one to report; `best` is kept for inspection.
pub fn train(
    net: &mut Network,
    data: &WindowSet,
    validation: Option<&WindowSet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, OptimError> {
    let mut trainer = Trainer::new(net, data, validation, cfg)?;
    while trainer.step(net)?.is_some() {}
    let (history, best) = trainer.finish();
    Ok(TrainOutcome { history, best })
}
