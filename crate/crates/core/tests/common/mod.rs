//! Finite-difference oracle shared by the gradient and acceptance tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tddn::model::{TddnConfig, TddnModel};
use tddn::tensor::{self, Tensor};

pub const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], i: usize, mut f: F) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += FD_EPS;
    let fp = f(&xp);
    xp[i] = x[i] - FD_EPS;
    let fm = f(&xp);
    (fp - fm) / (2.0 * FD_EPS)
}

/// Largest relative error between `analytic` and central differences of `f`
/// at `x`.
pub fn max_fd_error<F: FnMut(&[f64]) -> f64>(x: &[f64], analytic: &[f64], mut f: F) -> f64 {
    assert_eq!(x.len(), analytic.len());
    (0..x.len())
        .map(|i| rel_err(analytic[i], central_diff(x, i, &mut f)))
        .fold(0.0, f64::max)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_vec(shape, uniform(rng, shape.iter().product())).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error over the input, weight and bias gradients of every
/// layer kernel for one random draw. Each kernel is reduced to a scalar by a
/// random projection of its output.
pub fn layer_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // conv1d
    let (batch, len, cin, cout) = (2, 5, 3, 4);
    let x = uniform(&mut rng, batch * len * cin);
    let w = tensor(&mut rng, &[cout, 2, cin]);
    let b = tensor(&mut rng, &[cout]);
    let proj = uniform(&mut rng, batch * len * cout);
    let (_, cache) = tensor::conv1d_forward(&x, batch, len, cin, &w, &b).unwrap();
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(b.shape());
    let dx = tensor::conv1d_backward(&cache, &proj, &w, &mut gw, &mut gb).unwrap();
    let conv_loss = |x: &[f64], w: &Tensor, b: &Tensor| {
        dot(&tensor::conv1d_forward(x, batch, len, cin, w, b).unwrap().0, &proj)
    };
    let e_x = max_fd_error(&x, &dx, |xv| conv_loss(xv, &w, &b));
    let e_w = max_fd_error(w.data(), gw.data(), |wv| {
        conv_loss(&x, &Tensor::from_vec(w.shape(), wv.to_vec()).unwrap(), &b)
    });
    let e_b = max_fd_error(b.data(), gb.data(), |bv| {
        conv_loss(&x, &w, &Tensor::from_vec(b.shape(), bv.to_vec()).unwrap())
    });
    out.push(("conv1d", e_x.max(e_w).max(e_b)));

    // relu / tanh
    let x = uniform(&mut rng, 12);
    let proj = uniform(&mut rng, 12);
    let mut y = x.clone();
    tensor::relu_inplace(&mut y);
    let mut g = proj.clone();
    tensor::relu_backward_inplace(&y, &mut g);
    let e = max_fd_error(&x, &g, |xv| {
        let mut y = xv.to_vec();
        tensor::relu_inplace(&mut y);
        dot(&y, &proj)
    });
    out.push(("relu", e));
    let mut y = x.clone();
    tensor::tanh_inplace(&mut y);
    let mut g = proj.clone();
    tensor::tanh_backward_inplace(&y, &mut g);
    let e = max_fd_error(&x, &g, |xv| {
        let mut y = xv.to_vec();
        tensor::tanh_inplace(&mut y);
        dot(&y, &proj)
    });
    out.push(("tanh", e));

    // maxpool (odd length exercises the dropped step)
    let (batch, len, ch) = (2, 7, 3);
    let x = uniform(&mut rng, batch * len * ch);
    let proj = uniform(&mut rng, batch * (len / 2) * ch);
    let (_, cache) = tensor::maxpool1d_forward(&x, batch, len, ch).unwrap();
    let dx = tensor::maxpool1d_backward(&cache, &proj).unwrap();
    let e = max_fd_error(&x, &dx, |xv| {
        dot(&tensor::maxpool1d_forward(xv, batch, len, ch).unwrap().0, &proj)
    });
    out.push(("maxpool1d", e));

    // linear
    let (batch, din, dout) = (3, 4, 5);
    let x = uniform(&mut rng, batch * din);
    let w = tensor(&mut rng, &[dout, din]);
    let b = tensor(&mut rng, &[dout]);
    let proj = uniform(&mut rng, batch * dout);
    let (_, cache) = tensor::linear_forward(&x, batch, &w, &b).unwrap();
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(b.shape());
    let dx = tensor::linear_backward(&cache, &proj, &w, &mut gw, &mut gb).unwrap();
    let lin_loss = |x: &[f64], w: &Tensor, b: &Tensor| {
        dot(&tensor::linear_forward(x, batch, w, b).unwrap().0, &proj)
    };
    let e_x = max_fd_error(&x, &dx, |xv| lin_loss(xv, &w, &b));
    let e_w = max_fd_error(w.data(), gw.data(), |wv| {
        lin_loss(&x, &Tensor::from_vec(w.shape(), wv.to_vec()).unwrap(), &b)
    });
    let e_b = max_fd_error(b.data(), gb.data(), |bv| {
        lin_loss(&x, &w, &Tensor::from_vec(b.shape(), bv.to_vec()).unwrap())
    });
    out.push(("linear", e_x.max(e_w).max(e_b)));

    // softmax
    let s: Vec<f64> = uniform(&mut rng, 6).iter().map(|v| 3.0 * v).collect();
    let proj = uniform(&mut rng, 6);
    let p = tensor::softmax(&s);
    let ds = tensor::softmax_backward(&p, &proj);
    let e = max_fd_error(&s, &ds, |sv| dot(&tensor::softmax(sv), &proj));
    out.push(("softmax", e));

    // mse
    let pred: Vec<f64> = uniform(&mut rng, 4).iter().map(|v| 50.0 * v).collect();
    let target: Vec<f64> = uniform(&mut rng, 4).iter().map(|v| 50.0 * v).collect();
    let (_, g) = tensor::mse_loss(&pred, &target).unwrap();
    let e = max_fd_error(&pred, &g, |pv| tensor::mse_loss(pv, &target).unwrap().0);
    out.push(("mse_loss", e));

    out
}

/// Configuration used for whole-network gradient checks.
pub fn tiny_config(seed: u64) -> TddnConfig {
    TddnConfig::new(8, 3, seed).with_conv_channels(vec![4, 8, 16])
}

/// Worst relative error over every parameter of the tiny network for one
/// random draw of parameters, inputs and targets (batch of 2, MSE loss).
pub fn model_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let mut model = TddnModel::new(tiny_config(seed)).unwrap();
    // nonzero biases so every code path carries signal
    for p in model.params.iter_mut() {
        if p.name.ends_with(".bias") {
            let n = p.value.len();
            p.value = Tensor::from_vec(p.value.shape(), uniform(&mut rng, n).iter().map(|v| 0.1 * v).collect()).unwrap();
        }
    }
    let n = model.config.w * model.config.m;
    let wins: Vec<Vec<f64>> = (0..2).map(|_| uniform(&mut rng, n)).collect();
    let refs: Vec<&[f64]> = wins.iter().map(Vec::as_slice).collect();
    let targets = uniform(&mut rng, 2);

    let trace = model.forward_batch(&refs).unwrap();
    let (_, dpred) = tensor::mse_loss(trace.predictions(), &targets).unwrap();
    model.params.zero_grad();
    model.backward(&trace, &dpred).unwrap();

    let loss_of = |m: &TddnModel| {
        let p = m.predict_batch(&refs).unwrap();
        tensor::mse_loss(&p, &targets).unwrap().0
    };
    let n_params = model.params.iter().count();
    let mut worst: f64 = 0.0;
    for k in 0..n_params {
        let (values, grads) = {
            let p = model.params.iter().nth(k).unwrap();
            (p.value.data().to_vec(), p.grad.data().to_vec())
        };
        let mut probe = model.clone();
        let e = max_fd_error(&values, &grads, |v| {
            probe.params.iter_mut().nth(k).unwrap().value.data_mut().copy_from_slice(v);
            loss_of(&probe)
        });
        worst = worst.max(e);
    }
    worst
}
