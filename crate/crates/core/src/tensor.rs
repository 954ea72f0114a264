//! Dense `f64` arrays and the layer kernels used by the network.
//!
//! Every kernel works on a batch of samples laid out contiguously
//! (`[batch][time][channel]`, row-major) and comes as a forward/backward
//! pair. Backward passes accumulate parameter gradients (`+=`) and return or
//! overwrite input gradients.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(Error::Shape(format!("{} axes (at most 3)", shape.len())));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {len} values, got {}",
                shape,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Size of one row (product of all trailing axes).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A learnable array with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where `a` is
/// `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index matrixmultiply touches
    // given these strides; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// 1D convolution, kernel width 2, one zero row prepended

/// Width of every convolution filter.
pub const KERNEL_WIDTH: usize = 2;

/// Cache of a convolution forward pass.
#[derive(Debug, Clone, Default)]
pub struct ConvCache {
    batch: usize,
    len: usize,
    in_ch: usize,
    /// `[batch*len][2*in_ch]`: rows `t-1` and `t` of the zero-padded input.
    cols: Vec<f64>,
}

fn im2col(input: &[f64], batch: usize, len: usize, in_ch: usize) -> Vec<f64> {
    let width = KERNEL_WIDTH * in_ch;
    let mut cols = vec![0.0; batch * len * width];
    for b in 0..batch {
        let x = &input[b * len * in_ch..(b + 1) * len * in_ch];
        for t in 0..len {
            let dst = &mut cols[(b * len + t) * width..(b * len + t + 1) * width];
            if t > 0 {
                dst[..in_ch].copy_from_slice(&x[(t - 1) * in_ch..t * in_ch]);
            }
            dst[in_ch..].copy_from_slice(&x[t * in_ch..(t + 1) * in_ch]);
        }
    }
    cols
}

/// Batched convolution. `input` is `[batch][len][in_ch]`, `weight` is
/// `[out_ch][2][in_ch]` (tap 0 sees step `t-1`, tap 1 sees step `t`),
/// output is `[batch][len][out_ch]`.
pub fn conv1d_forward(
    input: &[f64],
    batch: usize,
    len: usize,
    in_ch: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(Vec<f64>, ConvCache)> {
    let out_ch = bias.len();
    if input.len() != batch * len * in_ch {
        return Err(Error::Shape(format!(
            "conv1d input has {} values, expected {batch}x{len}x{in_ch}",
            input.len()
        )));
    }
    if weight.shape() != [out_ch, KERNEL_WIDTH, in_ch] {
        return Err(Error::Shape(format!(
            "conv1d weight {:?} does not match {out_ch}x{KERNEL_WIDTH}x{in_ch}",
            weight.shape()
        )));
    }
    let cols = im2col(input, batch, len, in_ch);
    let rows = batch * len;
    let mut out = vec![0.0; rows * out_ch];
    for r in 0..rows {
        out[r * out_ch..(r + 1) * out_ch].copy_from_slice(bias.data());
    }
    gemm(
        rows,
        KERNEL_WIDTH * in_ch,
        out_ch,
        1.0,
        &cols,
        false,
        weight.data(),
        true,
        1.0,
        &mut out,
    );
    Ok((
        out,
        ConvCache {
            batch,
            len,
            in_ch,
            cols,
        },
    ))
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv1d_backward(
    cache: &ConvCache,
    grad_out: &[f64],
    weight: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<Vec<f64>> {
    let out_ch = grad_bias.len();
    let (batch, len, in_ch) = (cache.batch, cache.len, cache.in_ch);
    let rows = batch * len;
    if cache.cols.len() != rows * KERNEL_WIDTH * in_ch {
        return Err(Error::NoForwardPass);
    }
    if grad_out.len() != rows * out_ch {
        return Err(Error::Shape("conv1d upstream gradient".into()));
    }
    let width = KERNEL_WIDTH * in_ch;
    gemm(
        out_ch,
        rows,
        width,
        1.0,
        grad_out,
        true,
        &cache.cols,
        false,
        1.0,
        grad_weight.data_mut(),
    );
    let gb = grad_bias.data_mut();
    for r in 0..rows {
        for (g, d) in gb.iter_mut().zip(&grad_out[r * out_ch..(r + 1) * out_ch]) {
            *g += d;
        }
    }
    let mut dcols = vec![0.0; rows * width];
    gemm(
        rows,
        out_ch,
        width,
        1.0,
        grad_out,
        false,
        weight.data(),
        false,
        0.0,
        &mut dcols,
    );
    let mut dx = vec![0.0; rows * in_ch];
    for b in 0..batch {
        for t in 0..len {
            let src = &dcols[(b * len + t) * width..(b * len + t + 1) * width];
            let base = b * len * in_ch;
            if t > 0 {
                let prev = &mut dx[base + (t - 1) * in_ch..base + t * in_ch];
                prev.iter_mut().zip(&src[..in_ch]).for_each(|(d, s)| *d += s);
            }
            let cur = &mut dx[base + t * in_ch..base + (t + 1) * in_ch];
            cur.iter_mut().zip(&src[in_ch..]).for_each(|(d, s)| *d += s);
        }
    }
    Ok(dx)
}

/// Single-sequence convolution: `input` is `len x in_ch`, output `len x out_ch`.
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [len, in_ch] = two_axes(input)?;
    let (out, _) = conv1d_forward(input.data(), 1, len, in_ch, weight, bias)?;
    Tensor::from_vec(&[len, bias.len()], out)
}

fn two_axes(t: &Tensor) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        [a] => Ok([a, 1]),
        _ => Err(Error::Shape(format!("expected a matrix, got {:?}", t.shape()))),
    }
}

// ---------------------------------------------------------------------------
// activations

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` by the positive entries of the ReLU output.
pub fn relu_backward_inplace(output: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn tanh_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

/// `grad *= 1 - y^2` where `y` is the tanh output.
pub fn tanh_backward_inplace(output: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        *g *= 1.0 - y * y;
    }
}

pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    relu_inplace(out.data_mut());
    out
}

pub fn tanh(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    tanh_inplace(out.data_mut());
    out
}

// ---------------------------------------------------------------------------
// max pooling, size 2 stride 2

pub const POOL_SIZE: usize = 2;

#[derive(Debug, Clone, Default)]
pub struct PoolCache {
    batch: usize,
    len: usize,
    ch: usize,
    /// Flat input index of the winner of each output element.
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn pooled_len(len: usize) -> usize {
    len / POOL_SIZE
}

/// `[batch][len][ch]` to `[batch][len/2][ch]`; an odd trailing step is
/// dropped and ties go to the earlier step.
pub fn maxpool1d_forward(
    input: &[f64],
    batch: usize,
    len: usize,
    ch: usize,
) -> Result<(Vec<f64>, PoolCache)> {
    if len < POOL_SIZE {
        return Err(Error::Shape(format!(
            "max pooling needs at least {POOL_SIZE} steps, got {len}"
        )));
    }
    if input.len() != batch * len * ch {
        return Err(Error::Shape("maxpool input size".into()));
    }
    let out_len = pooled_len(len);
    let mut out = vec![0.0; batch * out_len * ch];
    let mut argmax = vec![0; out.len()];
    for b in 0..batch {
        for t in 0..out_len {
            let i0 = (b * len + 2 * t) * ch;
            let i1 = i0 + ch;
            let o = (b * out_len + t) * ch;
            for c in 0..ch {
                let (v0, v1) = (input[i0 + c], input[i1 + c]);
                let (v, idx) = if v1 > v0 { (v1, i1 + c) } else { (v0, i0 + c) };
                out[o + c] = v;
                argmax[o + c] = idx;
            }
        }
    }
    Ok((
        out,
        PoolCache {
            batch,
            len,
            ch,
            argmax,
        },
    ))
}

pub fn maxpool1d_backward(cache: &PoolCache, grad_out: &[f64]) -> Result<Vec<f64>> {
    if cache.argmax.is_empty() && !grad_out.is_empty() {
        return Err(Error::NoForwardPass);
    }
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Shape("maxpool upstream gradient".into()));
    }
    let mut dx = vec![0.0; cache.batch * cache.len * cache.ch];
    for (&idx, &g) in cache.argmax.iter().zip(grad_out) {
        dx[idx] += g;
    }
    Ok(dx)
}

/// Single-sequence pooling over a `len x ch` matrix; returns the pooled
/// matrix and the flat input index of each winner.
pub fn maxpool1d(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [len, ch] = two_axes(input)?;
    let (out, cache) = maxpool1d_forward(input.data(), 1, len, ch)?;
    Ok((Tensor::from_vec(&[pooled_len(len), ch], out)?, cache.argmax))
}

// ---------------------------------------------------------------------------
// fully connected

#[derive(Debug, Clone, Default)]
pub struct LinearCache {
    batch: usize,
    input: Vec<f64>,
}

/// `[batch][d_in]` to `[batch][d_out]` with `weight` shaped `d_out x d_in`.
pub fn linear_forward(
    input: &[f64],
    batch: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(Vec<f64>, LinearCache)> {
    let d_out = bias.len();
    let [wo, d_in] = two_axes(weight)?;
    if wo != d_out || input.len() != batch * d_in {
        return Err(Error::Shape(format!(
            "linear: weight {:?}, bias {}, input {} for batch {batch}",
            weight.shape(),
            d_out,
            input.len()
        )));
    }
    let mut out = vec![0.0; batch * d_out];
    for r in 0..batch {
        out[r * d_out..(r + 1) * d_out].copy_from_slice(bias.data());
    }
    gemm(batch, d_in, d_out, 1.0, input, false, weight.data(), true, 1.0, &mut out);
    Ok((
        out,
        LinearCache {
            batch,
            input: input.to_vec(),
        },
    ))
}

pub fn linear_backward(
    cache: &LinearCache,
    grad_out: &[f64],
    weight: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Result<Vec<f64>> {
    let [d_out, d_in] = two_axes(weight)?;
    let batch = cache.batch;
    if cache.input.len() != batch * d_in || batch == 0 {
        return Err(Error::NoForwardPass);
    }
    if grad_out.len() != batch * d_out {
        return Err(Error::Shape("linear upstream gradient".into()));
    }
    gemm(
        d_out,
        batch,
        d_in,
        1.0,
        grad_out,
        true,
        &cache.input,
        false,
        1.0,
        grad_weight.data_mut(),
    );
    let gb = grad_bias.data_mut();
    for r in 0..batch {
        for (g, d) in gb.iter_mut().zip(&grad_out[r * d_out..(r + 1) * d_out]) {
            *g += d;
        }
    }
    let mut dx = vec![0.0; batch * d_in];
    gemm(batch, d_out, d_in, 1.0, grad_out, false, weight.data(), false, 0.0, &mut dx);
    Ok(dx)
}

pub fn linear(input: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    linear_forward(input, 1, weight, bias).map(|(out, _)| out)
}

// ---------------------------------------------------------------------------
// softmax and loss

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Gradient w.r.t. the scores given the softmax output `p` and upstream `g`:
/// `p_i * (g_i - sum_k p_k g_k)`.
pub fn softmax_backward(p: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad).map(|(a, b)| a * b).sum();
    p.iter().zip(grad).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}
