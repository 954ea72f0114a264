//! Engine-level validation split, Adam, the two-stage learning-rate schedule
//! and early stopping.

use std::fmt;
use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmapss::DatasetBundle;
use crate::error::{Error, Result};
use crate::metrics::rmse;
use crate::model::{TddnConfig, TddnModel, PREDICT_CHUNK};
use crate::preprocess::{EngineSeries, LabelPolicy, Preprocessor, SensorSelection};
use crate::tensor::{mse_loss, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Last epoch trained at `lr`; later epochs use `lr * lr_decay`.
    pub lr_drop_epoch: usize,
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub r_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            lr: 1e-4,
            lr_drop_epoch: 100,
            lr_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
            r_max: crate::preprocess::DEFAULT_R_MAX,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size < 1 {
            return bad("batch size must be >= 1");
        }
        if self.max_epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return bad("learning rate must be > 0");
        }
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        LabelPolicy::new(self.r_max).map(|_| ())
    }
}

/// Learning rate for a 1-based epoch.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch <= config.lr_drop_epoch {
        config.lr
    } else {
        config.lr * config.lr_decay
    }
}

/// Randomly assigns `round(fraction * count)` engines to validation.
/// Both returned lists are sorted.
pub fn split_engines(unit_ids: &[u32], fraction: f64, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    let count = unit_ids.len();
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 engines to split, got {count}"
        )));
    }
    let n_val = (fraction * count as f64).round() as usize;
    if n_val == 0 || n_val >= count {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {fraction} leaves an empty side for {count} engines"
        )));
    }
    let mut ids = unit_ids.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(params: impl Iterator<Item = &'a Param>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = params.map(|p| p.value.len()).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected update of every parameter from its `grad`, in the
    /// order the iterator yields them.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Param>, lr: f64) -> Result<()> {
        let params: Vec<&mut Param> = params.collect();
        if params.len() != self.first.len()
            || params
                .iter()
                .zip(&self.first)
                .any(|(p, m)| p.value.len() != m.len() || p.grad.len() != m.len())
        {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            let Param { value, grad, .. } = p;
            let values = value.data_mut().iter_mut().zip(grad.data());
            for (((x, g), mi), vi) in values.zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Model plus optimizer state; one call to [`Trainer::step`] is one
/// minibatch update.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: TddnModel,
    pub adam: AdamState,
}

impl Trainer {
    pub fn new(model: TddnModel, config: &TrainConfig) -> Self {
        let adam = AdamState::new(model.params.iter(), config.beta1, config.beta2, config.eps);
        Self { model, adam }
    }

    /// Forward, MSE, backward, Adam. Returns the batch loss before the update.
    pub fn step(&mut self, windows: &[&[f64]], labels: &[f64], lr: f64) -> Result<f64> {
        let trace = self.model.forward_batch(windows)?;
        let (loss, grad) = mse_loss(trace.predictions(), labels)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        self.model.params.zero_grad();
        self.model.backward(&trace, &grad)?;
        self.adam.step(self.model.params.iter_mut(), lr)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub stop_reason: StopReason,
    pub train_engines: Vec<u32>,
    pub validation_engines: Vec<u32>,
}

impl TrainReport {
    /// `epoch,lr,train_loss,val_rmse` rows.
    pub fn write_log_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,lr,train_loss,val_rmse")?;
        for e in &self.epochs {
            writeln!(out, "{},{:?},{:?},{:?}", e.epoch, e.lr, e.train_loss, e.val_rmse)?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let ids = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        writeln!(out, "best_epoch={}", self.best_epoch)?;
        writeln!(out, "best_val_rmse={:?}", self.best_val_rmse)?;
        writeln!(out, "epochs_run={}", self.epochs.len())?;
        writeln!(out, "stop_reason={}", self.stop_reason)?;
        writeln!(out, "train_engines={}", ids(&self.train_engines))?;
        writeln!(out, "validation_engines={}", ids(&self.validation_engines))
    }
}

/// Trained network together with the preprocessing it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: TddnModel,
    pub preprocessor: Preprocessor,
}

/// Clamped-prediction RMSE over every window of `series`.
pub fn windows_rmse(model: &TddnModel, series: &[EngineSeries], policy: LabelPolicy) -> Result<f64> {
    let mut errors = Vec::new();
    for s in series {
        let idx: Vec<usize> = (0..s.num_windows()).collect();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let wins: Vec<&[f64]> = chunk.iter().map(|&j| s.window(j)).collect();
            let preds = model.predict_batch(&wins)?;
            errors.extend(
                chunk
                    .iter()
                    .zip(preds)
                    .map(|(&j, p)| policy.clamp(p) - s.labels[j]),
            );
        }
    }
    rmse(&errors)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn train(
    bundle: &DatasetBundle,
    selection: SensorSelection,
    model_config: TddnConfig,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    train_with(bundle, selection, model_config, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    bundle: &DatasetBundle,
    selection: SensorSelection,
    model_config: TddnConfig,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(TrainedModel, TrainReport)>
where
    F: FnMut(&EpochRecord),
{
    config.validate()?;
    if model_config.m != selection.m() {
        return Err(Error::Shape(format!(
            "model expects m = {}, selection has {} columns",
            model_config.m,
            selection.m()
        )));
    }
    let policy = LabelPolicy::new(config.r_max)?;
    let prep = Preprocessor::fit(&bundle.train, selection, policy, model_config.w)?;

    let ids: Vec<u32> = bundle.train.iter().map(|t| t.unit_id).collect();
    let (train_ids, val_ids) = split_engines(&ids, config.validation_fraction, config.seed)?;
    let series_for = |wanted: &[u32]| -> Result<Vec<EngineSeries>> {
        bundle
            .train
            .iter()
            .filter(|t| wanted.binary_search(&t.unit_id).is_ok())
            .map(|t| prep.series(t, 0))
            .collect()
    };
    let train_series = series_for(&train_ids)?;
    let val_series = series_for(&val_ids)?;
    let mut samples: Vec<(usize, usize)> = train_series
        .iter()
        .enumerate()
        .flat_map(|(e, s)| (0..s.num_windows()).map(move |j| (e, j)))
        .collect();
    info!(
        "{} training windows from {} engines, {} validation engines",
        samples.len(),
        train_ids.len(),
        val_ids.len()
    );

    let mut trainer = Trainer::new(TddnModel::new(model_config)?, config);
    let mut best_params = trainer.model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let lr = lr_at(epoch, config);
        samples.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut loss_sum = 0.0;
        for (b, chunk) in samples.chunks(config.batch_size).enumerate() {
            let wins: Vec<&[f64]> = chunk.iter().map(|&(e, j)| train_series[e].window(j)).collect();
            let labels: Vec<f64> = chunk.iter().map(|&(e, j)| train_series[e].labels[j]).collect();
            let loss = trainer.step(&wins, &labels, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / samples.len() as f64;
        let val_rmse = windows_rmse(&trainer.model, &val_series, policy)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_rmse,
        };
        info!("epoch {epoch}: lr {lr:e}, train loss {train_loss:.4}, val rmse {val_rmse:.4}");
        on_epoch(&record);
        epochs.push(record);

        if val_rmse < best_val {
            best_val = val_rmse;
            best_epoch = epoch;
            best_params = trainer.model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let mut model = trainer.model;
    model.params = best_params;
    model.params.zero_grad();
    Ok((
        TrainedModel {
            model,
            preprocessor: prep,
        },
        TrainReport {
            epochs,
            best_epoch,
            best_val_rmse: best_val,
            stop_reason,
            train_engines: train_ids,
            validation_engines: val_ids,
        },
    ))
}
