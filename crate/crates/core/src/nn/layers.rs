//! Forward and backward kernels for the closed layer set.
//!
//! Convolution is cross-correlation (kernels are not flipped). Weights for a
//! convolution are stored as `kernel_h x kernel_w x in_channels x filters`,
//! fully connected weights as `1 x flat_in x 1 x out_units`.

use serde::{Deserialize, Serialize};

use super::spec::{conv_out_len, pool_out_len};
use super::{Mode, NnError, Padding};
use crate::tensor::{Shape4, Tensor4};

struct ConvGeometry {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn same_pad_before(len: usize, out: usize, kernel: usize, stride: usize) -> usize {
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    total / 2
}

fn conv_geometry(
    input: Shape4,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<ConvGeometry, NnError> {
    let out_h = conv_out_len(input.h, kernel.0, stride.0, padding).ok_or(NnError::DimMismatch {
        expected: kernel.0,
        found: input.h,
    })?;
    let out_w = conv_out_len(input.w, kernel.1, stride.1, padding).ok_or(NnError::DimMismatch {
        expected: kernel.1,
        found: input.w,
    })?;
    let (pad_top, pad_left) = match padding {
        Padding::Same => (
            same_pad_before(input.h, out_h, kernel.0, stride.0),
            same_pad_before(input.w, out_w, kernel.1, stride.1),
        ),
        Padding::None => (0, 0),
    };
    Ok(ConvGeometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

/// Valid kernel taps `[lo, hi)` for an output position starting at `origin`
/// (which may be negative because of padding).
#[inline]
fn tap_range(origin: isize, kernel: usize, len: usize) -> (usize, usize) {
    let lo = (-origin).max(0) as usize;
    let hi = (len as isize - origin).clamp(0, kernel as isize) as usize;
    (lo.min(hi), hi)
}

/// Reorders `kh x kw x c x f` filters so the filter index is fastest.
fn filters_last(weights: &Tensor4) -> Vec<f64> {
    let s = weights.shape();
    let (taps, f) = (s.h * s.w * s.c, s.n);
    let mut out = vec![0.0; taps * f];
    for ff in 0..f {
        for (t, &v) in weights.sample(ff).iter().enumerate() {
            out[t * f + ff] = v;
        }
    }
    out
}

fn filters_first(transposed: &[f64], shape: Shape4) -> Tensor4 {
    let (taps, f) = (shape.h * shape.w * shape.c, shape.n);
    let mut data = vec![0.0; taps * f];
    for t in 0..taps {
        for ff in 0..f {
            data[ff * taps + t] = transposed[t * f + ff];
        }
    }
    Tensor4::from_vec(shape, data).expect("shape preserved")
}

pub fn conv2d_forward(
    input: &Tensor4,
    weights: &Tensor4,
    bias: &[f64],
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor4, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    if ws.c != s.c {
        return Err(NnError::ChannelMismatch {
            expected: ws.c,
            found: s.c,
        });
    }
    if bias.len() != ws.n {
        return Err(NnError::LengthMismatch {
            expected: ws.n,
            found: bias.len(),
        });
    }
    let g = conv_geometry(s, (ws.h, ws.w), stride, padding)?;
    let (kh, kw, cin, nf) = (ws.h, ws.w, ws.c, ws.n);
    let wt = filters_last(weights);
    let mut out = Tensor4::zeros(Shape4::new(g.out_h, g.out_w, nf, s.n))?;
    let x = input.data();
    for n in 0..s.n {
        for oh in 0..g.out_h {
            let h0 = (oh * stride.0) as isize - g.pad_top as isize;
            let (i_lo, i_hi) = tap_range(h0, kh, s.h);
            for ow in 0..g.out_w {
                let w0 = (ow * stride.1) as isize - g.pad_left as isize;
                let (j_lo, j_hi) = tap_range(w0, kw, s.w);
                let o = out.offset(oh, ow, 0, n);
                let acc = &mut out.data_mut()[o..o + nf];
                acc.copy_from_slice(bias);
                for i in i_lo..i_hi {
                    let ih = (h0 + i as isize) as usize;
                    for j in j_lo..j_hi {
                        let iw = (w0 + j as isize) as usize;
                        let xo = ((n * s.h + ih) * s.w + iw) * cin;
                        for c in 0..cin {
                            let xv = x[xo + c];
                            let wrow = &wt[((i * kw + j) * cin + c) * nf..][..nf];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Stride-`stride` convolution with 'same' zero padding.
pub fn conv2d_same_forward(
    input: &Tensor4,
    weights: &Tensor4,
    bias: &[f64],
    stride: (usize, usize),
) -> Result<Tensor4, NnError> {
    conv2d_forward(input, weights, bias, stride, Padding::Same)
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &Tensor4,
    weights: &Tensor4,
    stride: (usize, usize),
    padding: Padding,
    grad_out: &Tensor4,
) -> Result<ConvGrads, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    let g = conv_geometry(s, (ws.h, ws.w), stride, padding)?;
    let expected = Shape4::new(g.out_h, g.out_w, ws.n, s.n);
    if grad_out.shape() != expected {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            expected,
            found: grad_out.shape(),
        });
    }
    let (kh, kw, cin, nf) = (ws.h, ws.w, ws.c, ws.n);
    let wt = filters_last(weights);
    let mut dwt = vec![0.0; wt.len()];
    let mut db = vec![0.0; nf];
    let mut dx = Tensor4::zeros(s)?;
    let x = input.data();
    let dxd = dx.data_mut();
    for n in 0..s.n {
        for oh in 0..g.out_h {
            let h0 = (oh * stride.0) as isize - g.pad_top as isize;
            let (i_lo, i_hi) = tap_range(h0, kh, s.h);
            for ow in 0..g.out_w {
                let w0 = (ow * stride.1) as isize - g.pad_left as isize;
                let (j_lo, j_hi) = tap_range(w0, kw, s.w);
                let go = grad_out.offset(oh, ow, 0, n);
                let gy = &grad_out.data()[go..go + nf];
                for (b, &gv) in db.iter_mut().zip(gy) {
                    *b += gv;
                }
                for i in i_lo..i_hi {
                    let ih = (h0 + i as isize) as usize;
                    for j in j_lo..j_hi {
                        let iw = (w0 + j as isize) as usize;
                        let xo = ((n * s.h + ih) * s.w + iw) * cin;
                        for c in 0..cin {
                            let base = ((i * kw + j) * cin + c) * nf;
                            let wrow = &wt[base..base + nf];
                            let dot: f64 = wrow.iter().zip(gy).map(|(a, b)| a * b).sum();
                            dxd[xo + c] += dot;
                            let xv = x[xo + c];
                            for (d, &gv) in dwt[base..base + nf].iter_mut().zip(gy) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weights: filters_first(&dwt, ws),
        bias: db,
    })
}

pub fn avgpool_forward(
    input: &Tensor4,
    pool: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor4, NnError> {
    let s = input.shape();
    let too_big = NnError::PoolLargerThanInput {
        pool,
        input: (s.h, s.w),
    };
    let oh = pool_out_len(s.h, pool.0, stride.0).ok_or(too_big.clone())?;
    let ow = pool_out_len(s.w, pool.1, stride.1).ok_or(too_big)?;
    let mut out = Tensor4::zeros(Shape4::new(oh, ow, s.c, s.n))?;
    let inv = 1.0 / (pool.0 * pool.1) as f64;
    for n in 0..s.n {
        for i in 0..oh {
            for j in 0..ow {
                for c in 0..s.c {
                    let mut acc = 0.0;
                    for pi in 0..pool.0 {
                        for pj in 0..pool.1 {
                            acc += input.get(i * stride.0 + pi, j * stride.1 + pj, c, n);
                        }
                    }
                    out.set(i, j, c, n, acc * inv);
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool_backward(
    input_shape: Shape4,
    pool: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor4,
) -> Result<Tensor4, NnError> {
    let go = grad_out.shape();
    let mut dx = Tensor4::zeros(input_shape)?;
    let inv = 1.0 / (pool.0 * pool.1) as f64;
    for n in 0..go.n {
        for i in 0..go.h {
            for j in 0..go.w {
                for c in 0..go.c {
                    let g = grad_out.get(i, j, c, n) * inv;
                    for pi in 0..pool.0 {
                        for pj in 0..pool.1 {
                            let o = dx.offset(i * stride.0 + pi, j * stride.1 + pj, c, n);
                            dx.data_mut()[o] += g;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            offset: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Values the backward pass needs from a train-mode forward.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BatchNormOutput {
    pub output: Tensor4,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub cache: Option<BatchNormCache>,
}

/// Per-channel normalization over `(h, w, n)`. Train mode uses batch
/// statistics and returns updated running statistics (unbiased variance);
/// inference mode uses the stored running statistics and returns them as-is.
pub fn batchnorm_forward(
    input: &Tensor4,
    params: &BatchNormParams,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<BatchNormOutput, NnError> {
    let s = input.shape();
    let ch = s.c;
    for len in [params.scale.len(), params.offset.len()] {
        if len != ch {
            return Err(NnError::ChannelMismatch {
                expected: len,
                found: ch,
            });
        }
    }
    let x = input.data();
    let m = (s.h * s.w * s.n) as f64;
    let (mean, var, running_mean, running_var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; ch];
            for (i, &v) in x.iter().enumerate() {
                mean[i % ch] += v;
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![0.0; ch];
            for (i, &v) in x.iter().enumerate() {
                let d = v - mean[i % ch];
                var[i % ch] += d * d;
            }
            var.iter_mut().for_each(|v| *v /= m);
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let mom = cfg.momentum;
            let rm = params
                .running_mean
                .iter()
                .zip(&mean)
                .map(|(&old, &b)| (1.0 - mom) * old + mom * b)
                .collect();
            let rv = params
                .running_var
                .iter()
                .zip(&var)
                .map(|(&old, &b)| (1.0 - mom) * old + mom * b * unbias)
                .collect();
            (mean, var, rm, rv)
        }
        Mode::Inference => (
            params.running_mean.clone(),
            params.running_var.clone(),
            params.running_mean.clone(),
            params.running_var.clone(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.epsilon).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for (i, &v) in x.iter().enumerate() {
        let c = i % ch;
        let xh = (v - mean[c]) * inv_std[c];
        normalized[i] = xh;
        out[i] = params.scale[c] * xh + params.offset[c];
    }
    Ok(BatchNormOutput {
        output: Tensor4::from_vec(s, out)?,
        running_mean,
        running_var,
        cache: (mode == Mode::Train).then_some(BatchNormCache {
            normalized,
            inv_std,
        }),
    })
}

/// Returns `(d_input, d_scale, d_offset)` for a train-mode forward.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    scale: &[f64],
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>), NnError> {
    let s = grad_out.shape();
    let ch = s.c;
    if scale.len() != ch {
        return Err(NnError::ChannelMismatch {
            expected: scale.len(),
            found: ch,
        });
    }
    let g = grad_out.data();
    let xh = &cache.normalized;
    let m = (s.h * s.w * s.n) as f64;
    let mut d_scale = vec![0.0; ch];
    let mut d_offset = vec![0.0; ch];
    for (i, (&gv, &x)) in g.iter().zip(xh).enumerate() {
        d_scale[i % ch] += gv * x;
        d_offset[i % ch] += gv;
    }
    // dx = scale * inv_std / m * (m * g - sum(g) - xhat * sum(g * xhat))
    let mut dx = vec![0.0; g.len()];
    for (i, d) in dx.iter_mut().enumerate() {
        let c = i % ch;
        *d = scale[c] * cache.inv_std[c] / m * (m * g[i] - d_offset[c] - xh[i] * d_scale[c]);
    }
    Ok((Tensor4::from_vec(s, dx)?, d_scale, d_offset))
}

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    input.map(|x| x.max(0.0))
}

pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(input.shape(), data).expect("same shape")
}

/// `y = W * flatten(x) + b`, output shaped `1 x 1 x out_units x n`.
pub fn fully_connected_forward(
    input: &Tensor4,
    weights: &Tensor4,
    bias: &[f64],
) -> Result<Tensor4, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    let flat = s.sample_len();
    if ws.w != flat {
        return Err(NnError::DimMismatch {
            expected: ws.w,
            found: flat,
        });
    }
    let units = ws.n;
    if bias.len() != units {
        return Err(NnError::LengthMismatch {
            expected: units,
            found: bias.len(),
        });
    }
    let mut out = Vec::with_capacity(units * s.n);
    for n in 0..s.n {
        let x = input.sample(n);
        for u in 0..units {
            let w = weights.sample(u);
            let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            out.push(dot + bias[u]);
        }
    }
    Tensor4::from_vec(Shape4::new(1, 1, units, s.n), out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

pub fn fully_connected_backward(
    input: &Tensor4,
    weights: &Tensor4,
    grad_out: &Tensor4,
) -> Result<DenseGrads, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    let units = ws.n;
    let go = grad_out.shape();
    if go.sample_len() != units || go.n != s.n {
        return Err(NnError::DimMismatch {
            expected: units * s.n,
            found: go.len(),
        });
    }
    let mut dx = Tensor4::zeros(s)?;
    let mut dw = Tensor4::zeros(ws)?;
    let mut db = vec![0.0; units];
    for n in 0..s.n {
        let gy = grad_out.sample(n);
        for u in 0..units {
            let g = gy[u];
            db[u] += g;
            let w = weights.sample(u);
            for (d, &wv) in dx.sample_mut(n).iter_mut().zip(w) {
                *d += g * wv;
            }
        }
        let x = input.sample(n);
        for u in 0..units {
            let g = gy[u];
            for (d, &xv) in dw.sample_mut(u).iter_mut().zip(x) {
                *d += g * xv;
            }
        }
    }
    Ok(DenseGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.len() != target.len() {
        return Err(NnError::LengthMismatch {
            expected: target.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::EmptyTensor);
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>, NnError> {
    if pred.len() != target.len() {
        return Err(NnError::LengthMismatch {
            expected: target.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::EmptyTensor);
    }
    let scale = 2.0 / pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| scale * (p - t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Tensor4 {
        Tensor4::column(values).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor4::from_vec(
            Shape4::new(3, 2, 2, 2),
            (0..24).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        // 1x1 kernel, 2 in channels, 2 filters, identity mixing
        let w = Tensor4::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d_same_forward(&x, &w, &[0.0, 0.0], (1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn padded_sum_of_three() {
        let w = Tensor4::from_vec(Shape4::new(3, 1, 1, 1), vec![1.0; 3]).unwrap();
        let y = conv2d_same_forward(&col(&[1.0, 2.0, 3.0]), &w, &[0.0], (1, 1)).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn even_kernel_pads_more_at_the_bottom() {
        // kernel [1, 10], pad top 0 bottom 1 -> y[i] = x[i] + 10 x[i+1]
        let w = Tensor4::from_vec(Shape4::new(2, 1, 1, 1), vec![1.0, 10.0]).unwrap();
        let y = conv2d_same_forward(&col(&[1.0, 2.0, 3.0]), &w, &[0.0], (1, 1)).unwrap();
        assert_eq!(y.data(), &[21.0, 32.0, 3.0]);
    }

    #[test]
    fn kernel_longer_than_input() {
        let x = Tensor4::zeros(Shape4::new(48, 1, 1, 1)).unwrap();
        let w = Tensor4::zeros(Shape4::new(146, 1, 1, 136)).unwrap();
        let y = conv2d_same_forward(&x, &w, &[0.5; 136], (1, 1)).unwrap();
        assert_eq!(y.shape(), Shape4::new(48, 1, 136, 1));
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor4::zeros(Shape4::new(4, 1, 2, 1)).unwrap();
        let w = Tensor4::zeros(Shape4::new(3, 1, 1, 1)).unwrap();
        assert!(matches!(
            conv2d_same_forward(&x, &w, &[0.0], (1, 1)),
            Err(NnError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn pooling_subsamples() {
        let x = col(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(avgpool_forward(&x, (1, 1), (4, 4)).unwrap().data(), &[1.0, 5.0]);
        assert_eq!(avgpool_forward(&x, (1, 1), (1, 1)).unwrap(), x);
        assert_eq!(
            avgpool_forward(&x, (2, 1), (2, 1)).unwrap().data(),
            &[1.5, 3.5, 5.5, 7.5]
        );
        let x48 = Tensor4::zeros(Shape4::new(48, 1, 1, 1)).unwrap();
        let y = avgpool_forward(&x48, (1, 1), (4, 4)).unwrap();
        let y = avgpool_forward(&y, (1, 1), (4, 4)).unwrap();
        assert_eq!(y.shape().h, 3);
        assert_eq!(avgpool_forward(&y, (1, 1), (4, 4)).unwrap().shape().h, 1);
        assert!(matches!(
            avgpool_forward(&col(&[1.0]), (2, 1), (1, 1)),
            Err(NnError::PoolLargerThanInput { .. })
        ));
    }

    #[test]
    fn batchnorm_two_values() {
        let x = Tensor4::from_vec(Shape4::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let p = BatchNormParams::new(1);
        let cfg = BatchNormConfig {
            epsilon: 0.0,
            momentum: 0.1,
        };
        let out = batchnorm_forward(&x, &p, Mode::Train, cfg).unwrap();
        assert_eq!(out.output.data(), &[-1.0, 1.0]);
        // unbiased batch variance 2, mean 2
        assert!((out.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((out.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_standardized_input_is_nearly_unchanged() {
        let x = Tensor4::from_vec(Shape4::new(2, 1, 1, 2), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let out = batchnorm_forward(&x, &BatchNormParams::new(1), Mode::Train, Default::default())
            .unwrap();
        for (a, b) in out.output.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_inference_uses_running_stats() {
        let x = col(&[4.0]);
        let mut p = BatchNormParams::new(1);
        p.running_mean = vec![2.0];
        p.running_var = vec![4.0];
        let cfg = BatchNormConfig {
            epsilon: 0.0,
            momentum: 0.1,
        };
        let out = batchnorm_forward(&x, &p, Mode::Inference, cfg).unwrap();
        assert_eq!(out.output.data(), &[1.0]);
        assert!(out.cache.is_none());
        assert!(matches!(
            batchnorm_forward(&x, &BatchNormParams::new(3), Mode::Train, cfg),
            Err(NnError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn relu_clamps() {
        assert_eq!(relu_forward(&col(&[-2.0, 0.0, 5.0])).data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dense_dot_product() {
        let w = Tensor4::from_vec(Shape4::new(1, 2, 1, 1), vec![1.0, 2.0]).unwrap();
        let y = fully_connected_forward(&col(&[3.0, 4.0]), &w, &[1.0]).unwrap();
        assert_eq!(y.data(), &[12.0]);
        assert_eq!(y.shape(), Shape4::new(1, 1, 1, 1));
        assert!(matches!(
            fully_connected_forward(&col(&[3.0]), &w, &[1.0]),
            Err(NnError::DimMismatch { .. })
        ));
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse_loss(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss_grad(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), vec![-2.0, 0.0]);
        assert!(matches!(
            mse_loss(&[1.0], &[1.0, 2.0]),
            Err(NnError::LengthMismatch { .. })
        ));
    }
}
