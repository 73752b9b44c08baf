use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::spec::{activation_shapes, LayerSpec, NetworkSpec, Normalization};
use super::{Mode, NnError};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Conv { weights: Tensor4, bias: Vec<f64> },
    BatchNorm(BatchNormParams),
    Dense { weights: Tensor4, bias: Vec<f64> },
}

/// Gradients for every learnable buffer, in [`Network::learnables`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Activations saved by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    generation: u64,
    mode: Mode,
    inputs: Vec<Tensor4>,
    batchnorm: Vec<Option<BatchNormCache>>,
}

impl ForwardCache {
    /// Input of every layer, in spec order.
    pub fn layer_inputs(&self) -> &[Tensor4] {
        &self.inputs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Option<LayerParams>>,
    input_mean: Option<Tensor4>,
    batchnorm: BatchNormConfig,
    #[serde(skip)]
    generation: u64,
}

impl Network {
    /// Glorot-uniform weights drawn from a seeded stream, zero biases, unit
    /// batch-norm scale.
    pub fn new(spec: NetworkSpec, seed: u64) -> Self {
        let shapes = activation_shapes(&spec).expect("spec validated at construction");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.len());
        for (i, layer) in spec.layers().iter().enumerate() {
            let prev = if i == 0 { shapes[0] } else { shapes[i - 1] };
            let p = match *layer {
                LayerSpec::Conv2D {
                    filters, kernel, ..
                } => {
                    let shape = Shape4::new(kernel.0, kernel.1, prev.c, filters);
                    let fan_in = kernel.0 * kernel.1 * prev.c;
                    let fan_out = kernel.0 * kernel.1 * filters;
                    Some(LayerParams::Conv {
                        weights: glorot(&mut rng, shape, fan_in, fan_out),
                        bias: vec![0.0; filters],
                    })
                }
                LayerSpec::BatchNorm => Some(LayerParams::BatchNorm(BatchNormParams::new(prev.c))),
                LayerSpec::FullyConnected { out_units } => {
                    let flat = prev.sample_len();
                    let shape = Shape4::new(1, flat, 1, out_units);
                    Some(LayerParams::Dense {
                        weights: glorot(&mut rng, shape, flat, out_units),
                        bias: vec![0.0; out_units],
                    })
                }
                _ => None,
            };
            params.push(p);
        }
        Self {
            spec,
            params,
            input_mean: None,
            batchnorm: BatchNormConfig::default(),
            generation: 0,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn batchnorm_config(&self) -> BatchNormConfig {
        self.batchnorm
    }

    pub fn input_mean(&self) -> Option<&Tensor4> {
        self.input_mean.as_ref()
    }

    /// Stores the zero-center statistic. Ignored by specs without
    /// zero-center normalization.
    pub fn set_input_mean(&mut self, mean: Tensor4) -> Result<(), NnError> {
        let expected = self.spec.input_shape();
        if mean.shape() != expected {
            return Err(NnError::ShapeMismatch {
                layer: 1,
                expected,
                found: mean.shape(),
            });
        }
        self.input_mean = Some(mean);
        self.generation += 1;
        Ok(())
    }

    /// Learnable buffers in a fixed order: per layer, weights then bias for
    /// conv and dense layers, scale then offset for batch norm.
    pub fn learnables(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for p in self.params.iter().flatten() {
            match p {
                LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
                    out.push(weights.data());
                    out.push(bias.as_slice());
                }
                LayerParams::BatchNorm(bn) => {
                    out.push(bn.scale.as_slice());
                    out.push(bn.offset.as_slice());
                }
            }
        }
        out
    }

    pub fn learnables_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::new();
        for p in self.params.iter_mut().flatten() {
            match p {
                LayerParams::Conv { weights, bias } | LayerParams::Dense { weights, bias } => {
                    out.push(weights.data_mut());
                    out.push(bias.as_mut_slice());
                }
                LayerParams::BatchNorm(bn) => {
                    out.push(bn.scale.as_mut_slice());
                    out.push(bn.offset.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn num_learnable(&self) -> usize {
        self.learnables().iter().map(|t| t.len()).sum()
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.learnables().concat()
    }

    pub fn set_flat_weights(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let total = self.num_learnable();
        if flat.len() != total {
            return Err(NnError::LengthMismatch {
                expected: total,
                found: flat.len(),
            });
        }
        let mut rest = flat;
        for buf in self.learnables_mut() {
            let (head, tail) = rest.split_at(buf.len());
            buf.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Batch-norm running means and variances, concatenated in layer order.
    pub fn flat_running_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.params.iter().flatten() {
            if let LayerParams::BatchNorm(bn) = p {
                out.extend_from_slice(&bn.running_mean);
                out.extend_from_slice(&bn.running_var);
            }
        }
        out
    }

    pub fn set_flat_running_stats(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let total = self.flat_running_stats().len();
        if flat.len() != total {
            return Err(NnError::LengthMismatch {
                expected: total,
                found: flat.len(),
            });
        }
        let mut rest = flat;
        for p in self.params.iter_mut().flatten() {
            if let LayerParams::BatchNorm(bn) = p {
                let c = bn.channels();
                bn.running_mean.copy_from_slice(&rest[..c]);
                bn.running_var.copy_from_slice(&rest[c..2 * c]);
                rest = &rest[2 * c..];
            }
        }
        Ok(())
    }

    fn check_input(&self, batch: &Tensor4) -> Result<(), NnError> {
        let expected = self.spec.input_shape();
        if batch.shape().with_batch(1) != expected {
            return Err(NnError::ShapeMismatch {
                layer: 1,
                expected: expected.with_batch(batch.shape().n),
                found: batch.shape(),
            });
        }
        Ok(())
    }

    fn center(&self, batch: &Tensor4) -> Tensor4 {
        match (&self.input_mean, self.spec.normalization()) {
            (Some(mean), Normalization::ZeroCenter) => {
                let mut out = batch.clone();
                let m = mean.data();
                for n in 0..out.shape().n {
                    for (x, mu) in out.sample_mut(n).iter_mut().zip(m) {
                        *x -= mu;
                    }
                }
                out
            }
            _ => batch.clone(),
        }
    }

    /// Runs every layer. Train mode updates batch-norm running statistics
    /// and returns a cache for [`Network::backward`].
    pub fn forward(&mut self, batch: &Tensor4, mode: Mode) -> Result<(Tensor4, ForwardCache), NnError> {
        self.check_input(batch)?;
        let n_layers = self.spec.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut bn_caches = vec![None; n_layers];
        let mut cur = batch.clone();
        let cfg = self.batchnorm;
        for i in 0..n_layers {
            let layer = self.spec.layers()[i].clone();
            let next = match layer {
                LayerSpec::ImageInput { .. } => self.center(&cur),
                LayerSpec::Conv2D {
                    stride, padding, ..
                } => match &self.params[i] {
                    Some(LayerParams::Conv { weights, bias }) => {
                        conv2d_forward(&cur, weights, bias, stride, padding)
                            .map_err(|e| at_layer(e, i))?
                    }
                    _ => unreachable!(),
                },
                LayerSpec::BatchNorm => match &mut self.params[i] {
                    Some(LayerParams::BatchNorm(bn)) => {
                        let out = batchnorm_forward(&cur, bn, mode, cfg).map_err(|e| at_layer(e, i))?;
                        bn.running_mean = out.running_mean;
                        bn.running_var = out.running_var;
                        bn_caches[i] = out.cache;
                        out.output
                    }
                    _ => unreachable!(),
                },
                LayerSpec::ReLU => relu_forward(&cur),
                LayerSpec::AvgPool { pool, stride } => {
                    avgpool_forward(&cur, pool, stride).map_err(|e| at_layer(e, i))?
                }
                LayerSpec::FullyConnected { .. } => match &self.params[i] {
                    Some(LayerParams::Dense { weights, bias }) => {
                        fully_connected_forward(&cur, weights, bias).map_err(|e| at_layer(e, i))?
                    }
                    _ => unreachable!(),
                },
                LayerSpec::RegressionOutput => cur.clone(),
            };
            inputs.push(std::mem::replace(&mut cur, next));
        }
        let cache = ForwardCache {
            generation: self.generation,
            mode,
            inputs,
            batchnorm: bn_caches,
        };
        Ok((cur, cache))
    }

    /// Inference-mode forward pass. Pure: takes `&self`.
    pub fn predict(&self, batch: &Tensor4) -> Result<Tensor4, NnError> {
        self.check_input(batch)?;
        let mut cur = self.center(batch);
        for (i, layer) in self.spec.layers().iter().enumerate().skip(1) {
            cur = match (layer, &self.params[i]) {
                (LayerSpec::Conv2D { stride, padding, .. }, Some(LayerParams::Conv { weights, bias })) => {
                    conv2d_forward(&cur, weights, bias, *stride, *padding).map_err(|e| at_layer(e, i))?
                }
                (LayerSpec::BatchNorm, Some(LayerParams::BatchNorm(bn))) => {
                    batchnorm_forward(&cur, bn, Mode::Inference, self.batchnorm)
                        .map_err(|e| at_layer(e, i))?
                        .output
                }
                (LayerSpec::ReLU, _) => relu_forward(&cur),
                (LayerSpec::AvgPool { pool, stride }, _) => {
                    avgpool_forward(&cur, *pool, *stride).map_err(|e| at_layer(e, i))?
                }
                (LayerSpec::FullyConnected { .. }, Some(LayerParams::Dense { weights, bias })) => {
                    fully_connected_forward(&cur, weights, bias).map_err(|e| at_layer(e, i))?
                }
                (LayerSpec::RegressionOutput, _) => cur,
                _ => unreachable!("params follow spec"),
            };
        }
        Ok(cur)
    }

    /// [`Network::predict`] over a large set, `chunk` samples at a time.
    /// Returns the flattened `n x outputs` predictions.
    pub fn predict_all(&self, inputs: &Tensor4, chunk: usize) -> Result<Vec<f64>, NnError> {
        let n = inputs.shape().n;
        let mut out = Vec::with_capacity(n * self.spec.output_len());
        let idx: Vec<usize> = (0..n).collect();
        for part in idx.chunks(chunk.max(1)) {
            let batch = inputs.select(part)?;
            out.extend_from_slice(self.predict(&batch)?.data());
        }
        Ok(out)
    }

    /// Backpropagates `loss_grad` (shaped like the prediction) through a
    /// train-mode cache produced by this network in its current state.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Tensor4) -> Result<Gradients, NnError> {
        if cache.generation != self.generation || cache.mode != Mode::Train {
            return Err(NnError::StaleCache);
        }
        let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.spec.len()];
        let mut g = loss_grad.clone();
        for i in (1..self.spec.len()).rev() {
            let x = &cache.inputs[i];
            g = match (&self.spec.layers()[i], &self.params[i]) {
                (LayerSpec::RegressionOutput, _) => {
                    if g.shape() != x.shape() {
                        return Err(NnError::ShapeMismatch {
                            layer: i + 1,
                            expected: x.shape(),
                            found: g.shape(),
                        });
                    }
                    g
                }
                (LayerSpec::FullyConnected { .. }, Some(LayerParams::Dense { weights, .. })) => {
                    let d = fully_connected_backward(x, weights, &g).map_err(|e| at_layer(e, i))?;
                    grads[i] = vec![d.weights.into_data(), d.bias];
                    d.input
                }
                (LayerSpec::AvgPool { pool, stride }, _) => {
                    avgpool_backward(x.shape(), *pool, *stride, &g).map_err(|e| at_layer(e, i))?
                }
                (LayerSpec::ReLU, _) => relu_backward(x, &g),
                (LayerSpec::BatchNorm, Some(LayerParams::BatchNorm(bn))) => {
                    let bc = cache.batchnorm[i].as_ref().ok_or(NnError::StaleCache)?;
                    let (dx, ds, doff) = batchnorm_backward(bc, &bn.scale, &g).map_err(|e| at_layer(e, i))?;
                    grads[i] = vec![ds, doff];
                    dx
                }
                (LayerSpec::Conv2D { stride, padding, .. }, Some(LayerParams::Conv { weights, .. })) => {
                    let d = conv2d_backward(x, weights, *stride, *padding, &g)
                        .map_err(|e| at_layer(e, i))?;
                    grads[i] = vec![d.weights.into_data(), d.bias];
                    d.input
                }
                _ => unreachable!("params follow spec"),
            };
        }
        Ok(Gradients {
            tensors: grads.into_iter().flatten().collect(),
        })
    }
}

fn at_layer(err: NnError, index: usize) -> NnError {
    match err {
        NnError::ShapeMismatch {
            expected, found, ..
        } => NnError::ShapeMismatch {
            layer: index + 1,
            expected,
            found,
        },
        other => other,
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: Shape4, fan_in: usize, fan_out: usize) -> Tensor4 {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.len()).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor4::from_vec(shape, data).expect("non-empty weight shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_only(inputs: usize) -> NetworkSpec {
        NetworkSpec::new(vec![
            LayerSpec::ImageInput {
                h: inputs,
                w: 1,
                c: 1,
                normalization: Normalization::None,
            },
            LayerSpec::FullyConnected { out_units: 1 },
            LayerSpec::RegressionOutput,
        ])
        .unwrap()
    }

    #[test]
    fn passthrough_network_is_identity() {
        let spec = NetworkSpec::new(vec![
            LayerSpec::ImageInput {
                h: 3,
                w: 1,
                c: 1,
                normalization: Normalization::None,
            },
            LayerSpec::RegressionOutput,
        ])
        .unwrap();
        let net = Network::new(spec, 0);
        let x = Tensor4::column(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn hand_chain_rule_for_single_weight() {
        let mut net = Network::new(dense_only(1), 0);
        net.set_flat_weights(&[3.0, 0.0]).unwrap();
        let x = Tensor4::column(&[2.0]).unwrap();
        let (pred, cache) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(pred.data(), &[6.0]);
        let g = mse_loss_grad(pred.data(), &[0.0]).unwrap();
        let g = Tensor4::from_vec(pred.shape(), g).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        assert_eq!(grads.tensors, vec![vec![24.0], vec![12.0]]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut net = Network::new(dense_only(4), 3);
        let x = Tensor4::column(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (pred, cache) = net.forward(&x, Mode::Train).unwrap();
        let zero = Tensor4::zeros(pred.shape()).unwrap();
        let grads = net.backward(&cache, &zero).unwrap();
        assert!(grads.tensors.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::new(dense_only(2), 1);
        let x = Tensor4::column(&[1.0, 2.0]).unwrap();
        let (pred, cache) = net.forward(&x, Mode::Train).unwrap();
        net.learnables_mut()[0][0] += 1.0;
        assert_eq!(net.backward(&cache, &pred), Err(NnError::StaleCache));
        let (pred, cache) = net.forward(&x, Mode::Inference).unwrap();
        assert_eq!(net.backward(&cache, &pred), Err(NnError::StaleCache));
    }

    #[test]
    fn wrong_input_shape_reports_layer() {
        let net = Network::new(dense_only(2), 1);
        let x = Tensor4::column(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            net.predict(&x),
            Err(NnError::ShapeMismatch { layer: 1, .. })
        ));
    }

    #[test]
    fn flat_weights_round_trip() {
        let mut net = Network::new(dense_only(3), 9);
        let w = net.flat_weights();
        assert_eq!(w.len(), 4);
        let doubled: Vec<f64> = w.iter().map(|v| v * 2.0).collect();
        net.set_flat_weights(&doubled).unwrap();
        assert_eq!(net.flat_weights(), doubled);
        assert!(net.set_flat_weights(&[0.0]).is_err());
    }
}
