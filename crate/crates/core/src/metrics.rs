//! RMSE, the asymmetric PHM score, and the last-cycle test protocol.

use std::io::Write;

use crate::cmapss::DatasetBundle;
use crate::error::{Error, Result};
use crate::model::TddnModel;
use crate::preprocess::Preprocessor;

/// Divisor of the early-prediction branch (`d < 0`).
pub const EARLY_DIVISOR: f64 = 13.0;
/// Divisor of the late-prediction branch (`d >= 0`).
pub const LATE_DIVISOR: f64 = 10.0;

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty error set".into()));
    }
    let mse = errors.iter().map(|d| d * d).sum::<f64>() / errors.len() as f64;
    Ok(mse.sqrt())
}

/// Per-sample score term for error `d = predicted - true`.
pub fn score_term(d: f64) -> f64 {
    if d < 0.0 {
        (-d / EARLY_DIVISOR).exp() - 1.0
    } else {
        (d / LATE_DIVISOR).exp() - 1.0
    }
}

pub fn nasa_score(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("score of an empty error set".into()));
    }
    Ok(errors.iter().map(|&d| score_term(d)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub unit_id: u32,
    pub true_rul: f64,
    pub predicted_rul: f64,
}

impl PredictionRecord {
    pub fn error(&self) -> f64 {
        self.predicted_rul - self.true_rul
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub score: f64,
    pub records: Vec<PredictionRecord>,
}

impl MetricsReport {
    pub fn from_records(records: Vec<PredictionRecord>) -> Result<Self> {
        let errors: Vec<f64> = records.iter().map(PredictionRecord::error).collect();
        if errors.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidArgument("non-finite prediction error".into()));
        }
        Ok(Self {
            rmse: rmse(&errors)?,
            score: nasa_score(&errors)?,
            records,
        })
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    /// `engine_id,true_rul,pred_rul,d` rows followed by a `# rmse=..,score=..`
    /// summary line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "engine_id,true_rul,pred_rul,d")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.unit_id,
                r.true_rul,
                r.predicted_rul,
                r.error()
            )?;
        }
        writeln!(out, "# rmse={},score={}", self.rmse, self.score)
    }
}

/// Options of the test protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Cap the provided test RUL at `R_max` before scoring.
    pub cap_true_rul: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { cap_true_rul: true }
    }
}

/// One prediction per test engine from the window ending at its last cycle.
pub fn evaluate_test(
    model: &TddnModel,
    bundle: &DatasetBundle,
    prep: &Preprocessor,
    options: EvalOptions,
) -> Result<MetricsReport> {
    evaluate_with(bundle, prep, options, |traj| model.predict_last(traj, prep))
}

/// Same protocol with an arbitrary last-cycle predictor. The predictor's
/// output is clamped to `[0, R_max]`.
pub fn evaluate_with<F>(
    bundle: &DatasetBundle,
    prep: &Preprocessor,
    options: EvalOptions,
    mut predict: F,
) -> Result<MetricsReport>
where
    F: FnMut(&crate::cmapss::EngineTrajectory) -> Result<f64>,
{
    if bundle.test.len() != bundle.test_rul.len() {
        return Err(Error::Structural(format!(
            "{} test engines but {} RUL values",
            bundle.test.len(),
            bundle.test_rul.len()
        )));
    }
    let mut records = Vec::with_capacity(bundle.test.len());
    for (traj, &rul) in bundle.test.iter().zip(&bundle.test_rul) {
        let true_rul = if options.cap_true_rul {
            (rul as f64).min(prep.policy.r_max)
        } else {
            rul as f64
        };
        records.push(PredictionRecord {
            unit_id: traj.unit_id,
            true_rul,
            predicted_rul: prep.policy.clamp(predict(traj)?),
        });
    }
    MetricsReport::from_records(records)
}
