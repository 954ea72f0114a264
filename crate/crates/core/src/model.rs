//! The network: a stack of width-2 convolutions with max pooling, a fully
//! connected layer producing `w` abstract features of size `m`, an attention
//! layer that weights those features against the first one, and a two-layer
//! regressor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmapss::EngineTrajectory;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::tensor::{
    conv1d_backward, conv1d_forward, linear_backward, linear_forward, maxpool1d_backward,
    maxpool1d_forward, pooled_len, relu_backward_inplace, relu_inplace, softmax, softmax_backward,
    tanh_backward_inplace, tanh_inplace, ConvCache, LinearCache, Param, PoolCache, Tensor,
    KERNEL_WIDTH,
};

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_CONV_CHANNELS: [usize; 3] = [32, 64, 128];
pub const DEFAULT_REGRESSOR_HIDDEN: usize = 8;

/// Channel counts for a conv stack of the given depth: 32, 64, 128, 256, ...
pub fn conv_channels_for_depth(depth: usize) -> Vec<usize> {
    (0..depth).map(|i| 32usize << i).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TddnConfig {
    /// Window length in cycles.
    pub w: usize,
    /// Input columns per cycle.
    pub m: usize,
    pub conv_channels: Vec<usize>,
    pub regressor_hidden: usize,
    pub seed: u64,
}

impl TddnConfig {
    pub fn new(w: usize, m: usize, seed: u64) -> Self {
        Self {
            w,
            m,
            conv_channels: DEFAULT_CONV_CHANNELS.to_vec(),
            regressor_hidden: DEFAULT_REGRESSOR_HIDDEN,
            seed,
        }
    }

    pub fn with_conv_channels(mut self, channels: Vec<usize>) -> Self {
        self.conv_channels = channels;
        self
    }

    pub fn depth(&self) -> usize {
        self.conv_channels.len()
    }

    /// Hidden size of the attention MLP; tied to the window length.
    pub fn attention_hidden(&self) -> usize {
        self.w
    }

    /// Length of the conv stack output.
    pub fn temporal_len(&self) -> usize {
        (0..self.depth()).fold(self.w, |len, _| pooled_len(len))
    }

    pub fn temporal_channels(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidArgument("m must be >= 1".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "conv stack needs at least one layer with nonzero channels".into(),
            ));
        }
        if self.regressor_hidden < 1 {
            return Err(Error::InvalidArgument("regressor width must be >= 1".into()));
        }
        let min_w = 1usize << self.depth();
        if self.w < min_w {
            return Err(Error::InvalidArgument(format!(
                "window {} too small for {} pooling stages (need >= {min_w})",
                self.w,
                self.depth()
            )));
        }
        Ok(())
    }

    /// Number of learnable scalars implied by the configuration.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut in_ch = self.m;
        for &l in &self.conv_channels {
            total += l * KERNEL_WIDTH * in_ch + l;
            in_ch = l;
        }
        let flat = self.temporal_len() * self.temporal_channels();
        let wm = self.w * self.m;
        let da = self.attention_hidden();
        let h = self.regressor_hidden;
        total += wm * flat + wm;
        total += da * 4 * self.m + da + da;
        total += h * self.m + h + h + 1;
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TddnParams {
    /// Weights shaped `[out_ch][2][in_ch]`.
    pub conv: Vec<Dense>,
    pub abstract_fc: Dense,
    pub attention: Dense,
    /// Context vector scored against every hidden attention state.
    pub context: Param,
    pub fc1: Dense,
    pub fc2: Dense,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn dense(rng: &mut ChaCha8Rng, name: &str, d_out: usize, d_in: usize) -> Dense {
    Dense {
        weight: Param::new(
            format!("{name}.weight"),
            glorot(rng, &[d_out, d_in], d_in, d_out),
        ),
        bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
    }
}

impl TddnParams {
    /// Glorot-uniform weights, zero biases; deterministic in `config.seed`.
    pub fn init(config: &TddnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut conv = Vec::with_capacity(config.depth());
        let mut in_ch = config.m;
        for (i, &l) in config.conv_channels.iter().enumerate() {
            let shape = [l, KERNEL_WIDTH, in_ch];
            conv.push(Dense {
                weight: Param::new(
                    format!("conv{}.weight", i + 1),
                    glorot(&mut rng, &shape, KERNEL_WIDTH * in_ch, KERNEL_WIDTH * l),
                ),
                bias: Param::new(format!("conv{}.bias", i + 1), Tensor::zeros(&[l])),
            });
            in_ch = l;
        }
        let flat = config.temporal_len() * config.temporal_channels();
        let wm = config.w * config.m;
        let da = config.attention_hidden();
        let abstract_fc = dense(&mut rng, "abstract", wm, flat);
        let attention = dense(&mut rng, "attention", da, 4 * config.m);
        let context = Param::new("attention.context", glorot(&mut rng, &[da], da, 1));
        let fc1 = dense(&mut rng, "fc1", config.regressor_hidden, config.m);
        let fc2 = dense(&mut rng, "fc2", 1, config.regressor_hidden);
        Ok(Self {
            conv,
            abstract_fc,
            attention,
            context,
            fc1,
            fc2,
        })
    }

    /// All parameters in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.conv
            .iter()
            .chain([&self.abstract_fc, &self.attention])
            .flat_map(|d| [&d.weight, &d.bias])
            .chain(std::iter::once(&self.context))
            .chain([&self.fc1, &self.fc2].into_iter().flat_map(|d| [&d.weight, &d.bias]))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        let TddnParams {
            conv,
            abstract_fc,
            attention,
            context,
            fc1,
            fc2,
        } = self;
        conv.iter_mut()
            .chain([abstract_fc, attention])
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .chain(std::iter::once(context))
            .chain([fc1, fc2].into_iter().flat_map(|d| [&mut d.weight, &mut d.bias]))
    }

    pub fn zero_grad(&mut self) {
        self.iter_mut().for_each(Param::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.iter().map(|p| p.value.len()).sum()
    }
}

/// Softmax weights over the window and the weighted sum of the original
/// abstract features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub weights: Vec<f64>,
    pub state: Vec<f64>,
}

/// Intermediate values of one window, for export and inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Conv stack output, `temporal_len x temporal_channels`.
    pub temporal: Tensor,
    /// Abstract features, `w x m`.
    pub abstract_features: Tensor,
    pub attention: AttentionOutput,
}

#[derive(Debug, Clone, Default)]
struct ConvStageTrace {
    conv: ConvCache,
    activated: Vec<f64>,
    pool: PoolCache,
}

/// Everything a backward pass needs from a batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    batch: usize,
    stages: Vec<ConvStageTrace>,
    temporal: Vec<f64>,
    abstract_cache: LinearCache,
    /// `[batch][w][m]`, post-ReLU.
    features: Vec<f64>,
    attention_cache: LinearCache,
    /// `[batch][w][d_a]`, post-tanh.
    hidden: Vec<f64>,
    /// `[batch][w]`
    weights: Vec<f64>,
    /// `[batch][m]`
    state: Vec<f64>,
    fc1_cache: LinearCache,
    fc1_out: Vec<f64>,
    fc2_cache: LinearCache,
    predictions: Vec<f64>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    /// Diagnostics of sample `b` of the batch.
    pub fn diagnostics(&self, config: &TddnConfig, b: usize) -> Diagnostics {
        let (w, m) = (config.w, config.m);
        let (tl, tc) = (config.temporal_len(), config.temporal_channels());
        let tsz = tl * tc;
        Diagnostics {
            temporal: Tensor::from_vec(&[tl, tc], self.temporal[b * tsz..(b + 1) * tsz].to_vec())
                .expect("temporal shape"),
            abstract_features: Tensor::from_vec(
                &[w, m],
                self.features[b * w * m..(b + 1) * w * m].to_vec(),
            )
            .expect("feature shape"),
            attention: AttentionOutput {
                weights: self.weights[b * w..(b + 1) * w].to_vec(),
                state: self.state[b * m..(b + 1) * m].to_vec(),
            },
        }
    }
}

fn stack_features(features: &[f64], batch: usize, w: usize, m: usize) -> Vec<f64> {
    let mut stacked = vec![0.0; batch * w * 4 * m];
    for b in 0..batch {
        let hb = &features[b * w * m..(b + 1) * w * m];
        let h1 = &hb[..m];
        for i in 0..w {
            let hi = &hb[i * m..(i + 1) * m];
            let row = &mut stacked[(b * w + i) * 4 * m..(b * w + i + 1) * 4 * m];
            for k in 0..m {
                row[k] = hi[k];
                row[m + k] = h1[k];
                row[2 * m + k] = hi[k] - h1[k];
                row[3 * m + k] = hi[k] * h1[k];
            }
        }
    }
    stacked
}

#[derive(Debug, Clone, PartialEq)]
pub struct TddnModel {
    pub config: TddnConfig,
    pub params: TddnParams,
}

impl TddnModel {
    pub fn new(config: TddnConfig) -> Result<Self> {
        let params = TddnParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: TddnConfig, params: TddnParams) -> Result<Self> {
        config.validate()?;
        let fresh = TddnParams::init(&config)?;
        for (a, b) in fresh.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        if fresh.iter().count() != params.iter().count() {
            return Err(Error::Shape("parameter count does not match config".into()));
        }
        Ok(Self { config, params })
    }

    fn window_size(&self) -> usize {
        self.config.w * self.config.m
    }

    fn conv_stack_batch(
        &self,
        input: Vec<f64>,
        batch: usize,
    ) -> Result<(Vec<f64>, Vec<ConvStageTrace>)> {
        let mut x = input;
        let mut len = self.config.w;
        let mut ch = self.config.m;
        let mut stages = Vec::with_capacity(self.config.depth());
        for layer in &self.params.conv {
            let out_ch = layer.bias.value.len();
            let (mut y, conv) =
                conv1d_forward(&x, batch, len, ch, &layer.weight.value, &layer.bias.value)?;
            relu_inplace(&mut y);
            let (pooled, pool) = maxpool1d_forward(&y, batch, len, out_ch)?;
            stages.push(ConvStageTrace {
                conv,
                activated: y,
                pool,
            });
            x = pooled;
            len = pooled_len(len);
            ch = out_ch;
        }
        Ok((x, stages))
    }

    /// Runs a batch of `w x m` windows and keeps what backward needs.
    pub fn forward_batch(&self, windows: &[&[f64]]) -> Result<Trace> {
        let batch = windows.len();
        if batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (w, m) = (self.config.w, self.config.m);
        let mut input = Vec::with_capacity(batch * w * m);
        for win in windows {
            if win.len() != self.window_size() {
                return Err(Error::Shape(format!(
                    "window has {} values, expected {w}x{m}",
                    win.len()
                )));
            }
            input.extend_from_slice(win);
        }
        let p = &self.params;

        let (temporal, stages) = self.conv_stack_batch(input, batch)?;

        let (mut features, abstract_cache) = linear_forward(
            &temporal,
            batch,
            &p.abstract_fc.weight.value,
            &p.abstract_fc.bias.value,
        )?;
        relu_inplace(&mut features);

        let (weights, state, hidden, attention_cache) = self.attention_batch(&features, batch)?;

        let (mut fc1_out, fc1_cache) =
            linear_forward(&state, batch, &p.fc1.weight.value, &p.fc1.bias.value)?;
        relu_inplace(&mut fc1_out);
        let (predictions, fc2_cache) =
            linear_forward(&fc1_out, batch, &p.fc2.weight.value, &p.fc2.bias.value)?;

        Ok(Trace {
            batch,
            stages,
            temporal,
            abstract_cache,
            features,
            attention_cache,
            hidden,
            weights,
            state,
            fc1_cache,
            fc1_out,
            fc2_cache,
            predictions,
        })
    }

    #[allow(clippy::type_complexity)]
    fn attention_batch(
        &self,
        features: &[f64],
        batch: usize,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, LinearCache)> {
        let (w, m) = (self.config.w, self.config.m);
        let da = self.config.attention_hidden();
        let p = &self.params;
        let stacked = stack_features(features, batch, w, m);
        let (mut hidden, cache) = linear_forward(
            &stacked,
            batch * w,
            &p.attention.weight.value,
            &p.attention.bias.value,
        )?;
        tanh_inplace(&mut hidden);
        let us = p.context.value.data();
        let mut weights = Vec::with_capacity(batch * w);
        let mut state = vec![0.0; batch * m];
        for b in 0..batch {
            let scores: Vec<f64> = (0..w)
                .map(|i| {
                    let u = &hidden[(b * w + i) * da..(b * w + i + 1) * da];
                    u.iter().zip(us).map(|(x, y)| x * y).sum()
                })
                .collect();
            let lambda = softmax(&scores);
            let s = &mut state[b * m..(b + 1) * m];
            for (i, &l) in lambda.iter().enumerate() {
                let h = &features[(b * w + i) * m..(b * w + i + 1) * m];
                s.iter_mut().zip(h).for_each(|(sk, hk)| *sk += l * hk);
            }
            weights.extend(lambda);
        }
        Ok((weights, state, hidden, cache))
    }

    /// Accumulates parameter gradients given `d loss / d prediction` for every
    /// sample of the traced batch.
    pub fn backward(&mut self, trace: &Trace, grad_pred: &[f64]) -> Result<()> {
        let batch = trace.batch;
        if batch == 0 {
            return Err(Error::NoForwardPass);
        }
        if grad_pred.len() != batch {
            return Err(Error::Shape(format!(
                "{} prediction gradients for a batch of {batch}",
                grad_pred.len()
            )));
        }
        let (w, m) = (self.config.w, self.config.m);
        let da = self.config.attention_hidden();
        let p = &mut self.params;

        let mut d_fc1 = linear_backward(
            &trace.fc2_cache,
            grad_pred,
            &p.fc2.weight.value,
            &mut p.fc2.weight.grad,
            &mut p.fc2.bias.grad,
        )?;
        relu_backward_inplace(&trace.fc1_out, &mut d_fc1);
        let d_state = linear_backward(
            &trace.fc1_cache,
            &d_fc1,
            &p.fc1.weight.value,
            &mut p.fc1.weight.grad,
            &mut p.fc1.bias.grad,
        )?;

        // attention
        let features = &trace.features;
        let mut d_features = vec![0.0; batch * w * m];
        let mut d_hidden = vec![0.0; batch * w * da];
        let us = p.context.value.data();
        let mut d_us = vec![0.0; da];
        for b in 0..batch {
            let ds = &d_state[b * m..(b + 1) * m];
            let lambda = &trace.weights[b * w..(b + 1) * w];
            let mut d_lambda = vec![0.0; w];
            for i in 0..w {
                let row = (b * w + i) * m;
                let h = &features[row..row + m];
                d_lambda[i] = h.iter().zip(ds).map(|(x, y)| x * y).sum();
                d_features[row..row + m]
                    .iter_mut()
                    .zip(ds)
                    .for_each(|(d, g)| *d += lambda[i] * g);
            }
            let d_scores = softmax_backward(lambda, &d_lambda);
            for (i, &de) in d_scores.iter().enumerate() {
                let off = (b * w + i) * da;
                let u = &trace.hidden[off..off + da];
                for k in 0..da {
                    d_hidden[off + k] = de * us[k];
                    d_us[k] += de * u[k];
                }
            }
        }
        p.context
            .grad
            .data_mut()
            .iter_mut()
            .zip(&d_us)
            .for_each(|(g, d)| *g += d);
        tanh_backward_inplace(&trace.hidden, &mut d_hidden);
        let d_stacked = linear_backward(
            &trace.attention_cache,
            &d_hidden,
            &p.attention.weight.value,
            &mut p.attention.weight.grad,
            &mut p.attention.bias.grad,
        )?;
        for b in 0..batch {
            let base = b * w * m;
            for i in 0..w {
                let ds = &d_stacked[(b * w + i) * 4 * m..(b * w + i + 1) * 4 * m];
                for k in 0..m {
                    let hi = features[base + i * m + k];
                    let h1 = features[base + k];
                    let (d0, d1, d2, d3) = (ds[k], ds[m + k], ds[2 * m + k], ds[3 * m + k]);
                    d_features[base + i * m + k] += d0 + d2 + d3 * h1;
                    d_features[base + k] += d1 - d2 + d3 * hi;
                }
            }
        }

        relu_backward_inplace(features, &mut d_features);
        let mut dx = linear_backward(
            &trace.abstract_cache,
            &d_features,
            &p.abstract_fc.weight.value,
            &mut p.abstract_fc.weight.grad,
            &mut p.abstract_fc.bias.grad,
        )?;

        for (stage, layer) in trace.stages.iter().zip(p.conv.iter_mut()).rev() {
            let mut dy = maxpool1d_backward(&stage.pool, &dx)?;
            relu_backward_inplace(&stage.activated, &mut dy);
            dx = conv1d_backward(
                &stage.conv,
                &dy,
                &layer.weight.value,
                &mut layer.weight.grad,
                &mut layer.bias.grad,
            )?;
        }
        Ok(())
    }

    /// Raw (unclamped) predictions for a batch of windows.
    pub fn predict_batch(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(windows)?.predictions)
    }

    /// Prediction and diagnostics for one `w x m` window.
    pub fn forward(&self, window: &Tensor) -> Result<(f64, Diagnostics)> {
        let trace = self.forward_batch(&[window.data()])?;
        Ok((trace.predictions[0], trace.diagnostics(&self.config, 0)))
    }

    /// Conv stack alone: `w x m` to `temporal_len x temporal_channels`.
    pub fn conv_stack(&self, window: &Tensor) -> Result<Tensor> {
        if window.shape() != [self.config.w, self.config.m] {
            return Err(Error::Shape(format!(
                "window {:?}, expected [{}, {}]",
                window.shape(),
                self.config.w,
                self.config.m
            )));
        }
        let (out, _) = self.conv_stack_batch(window.data().to_vec(), 1)?;
        Tensor::from_vec(
            &[self.config.temporal_len(), self.config.temporal_channels()],
            out,
        )
    }

    /// Flatten, fully connected, ReLU, reshape to `w x m`.
    pub fn abstract_features(&self, temporal: &Tensor) -> Result<Tensor> {
        let fc = &self.params.abstract_fc;
        let (mut out, _) = linear_forward(temporal.data(), 1, &fc.weight.value, &fc.bias.value)?;
        relu_inplace(&mut out);
        Tensor::from_vec(&[self.config.w, self.config.m], out)
    }

    pub fn attention(&self, features: &Tensor) -> Result<AttentionOutput> {
        if features.shape() != [self.config.w, self.config.m] {
            return Err(Error::Shape(format!(
                "abstract features {:?}, expected [{}, {}]",
                features.shape(),
                self.config.w,
                self.config.m
            )));
        }
        let (weights, state, _, _) = self.attention_batch(features.data(), 1)?;
        Ok(AttentionOutput { weights, state })
    }

    pub fn regress(&self, state: &[f64]) -> Result<f64> {
        let p = &self.params;
        let (mut h, _) = linear_forward(state, 1, &p.fc1.weight.value, &p.fc1.bias.value)?;
        relu_inplace(&mut h);
        let (out, _) = linear_forward(&h, 1, &p.fc2.weight.value, &p.fc2.bias.value)?;
        Ok(out[0])
    }

    /// Per-cycle RUL predictions for one engine, clamped to `[0, R_max]`.
    pub fn predict_engine(
        &self,
        traj: &EngineTrajectory,
        prep: &Preprocessor,
    ) -> Result<Vec<f64>> {
        self.check_preprocessor(prep)?;
        let series = prep.series(traj, 0)?;
        let mut out = Vec::with_capacity(series.num_windows());
        let idx: Vec<usize> = (0..series.num_windows()).collect();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let wins: Vec<&[f64]> = chunk.iter().map(|&j| series.window(j)).collect();
            out.extend(
                self.predict_batch(&wins)?
                    .into_iter()
                    .map(|p| prep.policy.clamp(p)),
            );
        }
        Ok(out)
    }

    /// Clamped prediction from the window ending at the last cycle.
    pub fn predict_last(&self, traj: &EngineTrajectory, prep: &Preprocessor) -> Result<f64> {
        self.check_preprocessor(prep)?;
        let series = prep.series(traj, 0)?;
        let last = series.num_windows() - 1;
        let pred = self.predict_batch(&[series.window(last)])?[0];
        Ok(prep.policy.clamp(pred))
    }

    pub(crate) fn check_preprocessor(&self, prep: &Preprocessor) -> Result<()> {
        if prep.w != self.config.w || prep.selection.m() != self.config.m {
            return Err(Error::Shape(format!(
                "preprocessor produces {}x{} windows, model expects {}x{}",
                prep.w,
                prep.selection.m(),
                self.config.w,
                self.config.m
            )));
        }
        Ok(())
    }
}

pub(crate) const PREDICT_CHUNK: usize = 256;
