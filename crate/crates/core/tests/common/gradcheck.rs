//! Central finite-difference oracle for layer and network gradients.
//!
//! Every check projects the output onto a fixed random direction `r`, so the
//! scalar objective is `sum(r * out)` (or the MSE loss for whole networks),
//! and compares the analytic gradient with `(f(x + h) - f(x - h)) / 2h`.
//! Layer instances keep every dimension at 6 or below.

#![allow(dead_code)]

use mecnn::arch::ConvStack;
use mecnn::nn::*;
use mecnn::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale. Biases
/// feeding a batch norm have an exact zero gradient, and their central
/// difference is rounding noise of order `eps * loss / STEP`.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest relative error between `analytic` and the central difference of
/// `f` with respect to the chosen coordinates of `x`.
pub fn check_coords(x: &mut [f64], coords: &[usize], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(x);
        x[i] = orig - STEP;
        let down = f(x);
        x[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

pub fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4 {
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

fn project(out: &Tensor4, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn with_data(shape: Shape4, data: &[f64]) -> Tensor4 {
    Tensor4::from_vec(shape, data.to_vec()).unwrap()
}

/// Conv layer with random geometry: input, weight and bias gradients.
pub fn conv_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c, n) = (rng.gen_range(3..=6), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
    let (kh, kw, f) = (rng.gen_range(1..=h), rng.gen_range(1..=w), rng.gen_range(1..4));
    let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
    let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::None };
    let input = random_tensor(&mut rng, Shape4::new(h, w, c, n));
    let weights = random_tensor(&mut rng, Shape4::new(kh, kw, c, f));
    let bias: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = conv2d_forward(&input, &weights, &bias, stride, padding).unwrap();
    let r: Vec<f64> = (0..out.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = conv2d_backward(&input, &weights, stride, padding, &with_data(out.shape(), &r)).unwrap();

    let (is, ws) = (input.shape(), weights.shape());
    let mut x = input.data().to_vec();
    let e1 = check_coords(&mut x, &all(is.len()), g.input.data(), |x| {
        project(&conv2d_forward(&with_data(is, x), &weights, &bias, stride, padding).unwrap(), &r)
    });
    let mut wv = weights.data().to_vec();
    let e2 = check_coords(&mut wv, &all(ws.len()), g.weights.data(), |wv| {
        project(&conv2d_forward(&input, &with_data(ws, wv), &bias, stride, padding).unwrap(), &r)
    });
    let mut b = bias.clone();
    let e3 = check_coords(&mut b, &all(f), &g.bias, |b| {
        project(&conv2d_forward(&input, &weights, b, stride, padding).unwrap(), &r)
    });
    e1.max(e2).max(e3)
}

/// Train-mode batch normalization: input, scale and offset gradients.
pub fn batchnorm_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape4::new(rng.gen_range(1..6), rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..5));
    let input = random_tensor(&mut rng, shape);
    let mut params = BatchNormParams::new(shape.c);
    for c in 0..shape.c {
        params.scale[c] = rng.gen_range(0.5..1.5);
        params.offset[c] = rng.gen_range(-0.5..0.5);
    }
    let cfg = BatchNormConfig::default();
    let fwd = |x: &Tensor4, p: &BatchNormParams| batchnorm_forward(x, p, Mode::Train, cfg).unwrap();
    let out = fwd(&input, &params);
    let r: Vec<f64> = (0..out.output.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (dx, dscale, doffset) =
        batchnorm_backward(out.cache.as_ref().unwrap(), &params.scale, &with_data(shape, &r)).unwrap();

    let mut x = input.data().to_vec();
    let e1 = check_coords(&mut x, &all(shape.len()), dx.data(), |x| {
        project(&fwd(&with_data(shape, x), &params).output, &r)
    });
    let mut s = params.scale.clone();
    let e2 = check_coords(&mut s, &all(shape.c), &dscale, |s| {
        let p = BatchNormParams {
            scale: s.to_vec(),
            ..params.clone()
        };
        project(&fwd(&input, &p).output, &r)
    });
    let mut o = params.offset.clone();
    let e3 = check_coords(&mut o, &all(shape.c), &doffset, |o| {
        let p = BatchNormParams {
            offset: o.to_vec(),
            ..params.clone()
        };
        project(&fwd(&input, &p).output, &r)
    });
    e1.max(e2).max(e3)
}

/// ReLU away from its kink.
pub fn relu_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape4::new(rng.gen_range(1..=6), rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
    let data: Vec<f64> = (0..shape.len())
        .map(|_| {
            let m: f64 = rng.gen_range(0.01..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let input = with_data(shape, &data);
    let r: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dx = relu_backward(&input, &with_data(shape, &r));
    let mut x = data;
    check_coords(&mut x, &all(shape.len()), dx.data(), |x| {
        project(&relu_forward(&with_data(shape, x)), &r)
    })
}

pub fn avgpool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape4::new(rng.gen_range(2..=6), rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(1..3));
    let pool = (rng.gen_range(1..=shape.h.min(3)), rng.gen_range(1..=shape.w));
    let stride = (rng.gen_range(1..5), rng.gen_range(1..3));
    let input = random_tensor(&mut rng, shape);
    let out = avgpool_forward(&input, pool, stride).unwrap();
    let r: Vec<f64> = (0..out.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dx = avgpool_backward(shape, pool, stride, &with_data(out.shape(), &r)).unwrap();
    let mut x = input.data().to_vec();
    check_coords(&mut x, &all(shape.len()), dx.data(), |x| {
        project(&avgpool_forward(&with_data(shape, x), pool, stride).unwrap(), &r)
    })
}

pub fn dense_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape4::new(rng.gen_range(1..5), rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
    let units = rng.gen_range(1..5);
    let input = random_tensor(&mut rng, shape);
    let ws = Shape4::new(1, shape.sample_len(), 1, units);
    let weights = random_tensor(&mut rng, ws);
    let bias: Vec<f64> = (0..units).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out = fully_connected_forward(&input, &weights, &bias).unwrap();
    let r: Vec<f64> = (0..out.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = fully_connected_backward(&input, &weights, &with_data(out.shape(), &r)).unwrap();
    let mut x = input.data().to_vec();
    let e1 = check_coords(&mut x, &all(shape.len()), g.input.data(), |x| {
        project(&fully_connected_forward(&with_data(shape, x), &weights, &bias).unwrap(), &r)
    });
    let mut wv = weights.data().to_vec();
    let e2 = check_coords(&mut wv, &all(ws.len()), g.weights.data(), |wv| {
        project(&fully_connected_forward(&input, &with_data(ws, wv), &bias).unwrap(), &r)
    });
    let mut b = bias.clone();
    let e3 = check_coords(&mut b, &all(units), &g.bias, |b| {
        project(&fully_connected_forward(&input, &weights, b).unwrap(), &r)
    });
    e1.max(e2).max(e3)
}

pub fn mse_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..20);
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let g = mse_loss_grad(&pred, &target).unwrap();
    let mut p = pred;
    check_coords(&mut p, &all(n), &g, |p| mse_loss(p, &target).unwrap())
}

/// Whole network under the MSE loss in train mode. `per_buffer` random
/// coordinates of every learnable buffer are checked (all of them when the
/// buffer is smaller).
pub fn network_case(stack: &ConvStack, seed: u64, batch: usize, per_buffer: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = stack.build().unwrap();
    let mut net = Network::new(spec.clone(), seed);
    let input_shape = spec.input_shape();
    // perturb the initial state so scale/offset are not at their defaults
    for buf in net.learnables_mut() {
        for v in buf.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    if spec.normalization() == Normalization::ZeroCenter {
        net.set_input_mean(random_tensor(&mut rng, input_shape)).unwrap();
    }
    let x = random_tensor(&mut rng, input_shape.with_batch(batch));
    let target: Vec<f64> = (0..batch * spec.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let relus: Vec<usize> = spec
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::ReLU))
        .map(|(i, _)| i)
        .collect();
    // loss and the sign pattern of every ReLU input
    let eval = |net: &mut Network| {
        let (out, cache) = net.forward(&x, Mode::Train).unwrap();
        let signs: Vec<bool> = relus
            .iter()
            .flat_map(|&i| cache.layer_inputs()[i].data().iter().map(|v| *v > 0.0))
            .collect();
        (mse_loss(out.data(), &target).unwrap(), signs)
    };
    let (out, cache) = net.forward(&x, Mode::Train).unwrap();
    let dl = mse_loss_grad(out.data(), &target).unwrap();
    let grads = net.backward(&cache, &with_data(out.shape(), &dl)).unwrap();

    let mut worst = 0.0f64;
    for (k, g) in grads.tensors.iter().enumerate() {
        let coords: Vec<usize> = if g.len() <= per_buffer {
            all(g.len())
        } else {
            (0..per_buffer).map(|_| rng.gen_range(0..g.len())).collect()
        };
        for i in coords {
            let orig = net.learnables()[k][i];
            net.learnables_mut()[k][i] = orig + STEP;
            let (up, up_signs) = eval(&mut net);
            net.learnables_mut()[k][i] = orig - STEP;
            let (down, down_signs) = eval(&mut net);
            net.learnables_mut()[k][i] = orig;
            // a ReLU input changed sign: the loss has a kink inside the
            // difference interval and the central difference is meaningless
            if up_signs != down_signs {
                continue;
            }
            worst = worst.max(rel_err(g[i], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}
