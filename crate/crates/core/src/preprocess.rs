//! Column selection, min-max scaling, RUL labels, first-cycle padding and
//! moving-window segmentation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;

use crate::cmapss::{CycleRow, EngineTrajectory, SubsetId, NUM_SENSORS, NUM_SETTINGS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default cap on the piecewise-linear RUL target, in cycles.
pub const DEFAULT_R_MAX: f64 = 120.0;

/// One input channel of a data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Column {
    /// Operational setting, 1-based.
    Setting(u8),
    /// Sensor channel, 1-based.
    Sensor(u8),
}

impl Column {
    pub fn value(self, row: &CycleRow) -> f64 {
        match self {
            Column::Setting(i) => row.settings[i as usize - 1],
            Column::Sensor(i) => row.sensors[i as usize - 1],
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Setting(i) => write!(f, "setting{i}"),
            Column::Sensor(i) => write!(f, "sensor{i}"),
        }
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown column `{s}`"));
        if let Some(rest) = s.strip_prefix("setting") {
            let i: u8 = rest.parse().map_err(|_| bad())?;
            if (1..=NUM_SETTINGS as u8).contains(&i) {
                return Ok(Column::Setting(i));
            }
        } else if let Some(rest) = s.strip_prefix("sensor") {
            let i: u8 = rest.parse().map_err(|_| bad())?;
            if (1..=NUM_SENSORS as u8).contains(&i) {
                return Ok(Column::Sensor(i));
            }
        }
        Err(bad())
    }
}

/// Sensors with a visible ascending or descending degradation trend in the
/// single-condition subsets.
const TRENDING_SENSORS: [u8; 13] = [2, 3, 4, 7, 8, 9, 11, 12, 13, 15, 17, 20, 21];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorSelection {
    pub subset: SubsetId,
    pub columns: Vec<Column>,
}

impl SensorSelection {
    pub fn m(&self) -> usize {
        self.columns.len()
    }

    pub fn row_values<'a>(&'a self, row: &'a CycleRow) -> impl Iterator<Item = f64> + 'a {
        self.columns.iter().map(move |c| c.value(row))
    }
}

/// Trend-based selection: FD001/FD003 keep settings 1-2 and the 13 trending
/// sensors (15 columns); FD002/FD004 keep everything (24 columns).
pub fn select_columns(subset: SubsetId) -> SensorSelection {
    select_columns_with(subset, false)
}

/// Like [`select_columns`], optionally adding sensor 14 back for the
/// single-condition subsets.
pub fn select_columns_with(subset: SubsetId, include_sensor_14: bool) -> SensorSelection {
    let columns = if subset.single_condition() {
        let mut cols = vec![Column::Setting(1), Column::Setting(2)];
        for s in TRENDING_SENSORS {
            if include_sensor_14 && s == 15 {
                cols.push(Column::Sensor(14));
            }
            cols.push(Column::Sensor(s));
        }
        cols
    } else {
        (1..=NUM_SETTINGS as u8)
            .map(Column::Setting)
            .chain((1..=NUM_SENSORS as u8).map(Column::Sensor))
            .collect()
    };
    SensorSelection { subset, columns }
}

/// Per-column minimum and maximum of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub columns: Vec<Column>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn is_degenerate(&self, col: usize) -> bool {
        self.max[col] == self.min[col]
    }

    pub fn degenerate_columns(&self) -> Vec<Column> {
        (0..self.columns.len())
            .filter(|&i| self.is_degenerate(i))
            .map(|i| self.columns[i])
            .collect()
    }

    /// Maps `value` of column `col` to `[-1, 1]` relative to the fitted range.
    /// Values outside the fitted range are not clipped.
    pub fn scale(&self, col: usize, value: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi == lo {
            0.0
        } else {
            2.0 * (value - lo) / (hi - lo) - 1.0
        }
    }
}

pub fn fit_scaler(train: &[EngineTrajectory], selection: &SensorSelection) -> Result<Scaler> {
    let m = selection.m();
    let mut min = vec![f64::INFINITY; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    let mut rows = 0usize;
    for row in train.iter().flat_map(|t| &t.rows) {
        rows += 1;
        for (j, v) in selection.row_values(row).enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    if rows == 0 {
        return Err(Error::InvalidArgument(
            "cannot fit a scaler on zero training rows".into(),
        ));
    }
    let scaler = Scaler {
        columns: selection.columns.clone(),
        min,
        max,
    };
    for col in scaler.degenerate_columns() {
        warn!("column {col} is constant over the training data; it scales to 0");
    }
    Ok(scaler)
}

/// Scales one trajectory into an `n x m` matrix.
pub fn apply_scaler(
    traj: &EngineTrajectory,
    scaler: &Scaler,
    selection: &SensorSelection,
) -> Result<Tensor> {
    if scaler.columns != selection.columns {
        return Err(Error::Shape(
            "scaler was fitted on a different column selection".into(),
        ));
    }
    let m = selection.m();
    let mut data = Vec::with_capacity(traj.len() * m);
    for row in &traj.rows {
        data.extend(
            selection
                .row_values(row)
                .enumerate()
                .map(|(j, v)| scaler.scale(j, v)),
        );
    }
    Tensor::from_vec(&[traj.len(), m], data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelPolicy {
    pub r_max: f64,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
        }
    }
}

impl LabelPolicy {
    pub fn new(r_max: f64) -> Result<Self> {
        if !r_max.is_finite() || r_max <= 0.0 {
            return Err(Error::InvalidArgument(format!("R_max must be > 0, got {r_max}")));
        }
        Ok(Self { r_max })
    }

    pub fn clamp(&self, prediction: f64) -> f64 {
        prediction.clamp(0.0, self.r_max)
    }
}

/// Piecewise-linear labels: cycle `j` (1-based) gets
/// `min(R_max, terminal_rul + n - j)`.
pub fn assign_rul_labels(n: usize, policy: LabelPolicy, terminal_rul: i64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("trajectory has no cycles".into()));
    }
    if terminal_rul < 0 {
        return Err(Error::InvalidArgument(format!(
            "terminal RUL must be >= 0, got {terminal_rul}"
        )));
    }
    Ok((1..=n)
        .map(|j| ((terminal_rul + (n - j) as i64) as f64).min(policy.r_max))
        .collect())
}

/// Prepends `w - 1` copies of the first row.
pub fn pad_series(series: &Tensor, w: usize) -> Result<Tensor> {
    if w < 1 {
        return Err(Error::InvalidArgument("window size must be >= 1".into()));
    }
    let n = series.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot pad an empty series".into()));
    }
    let m = series.row_len();
    let mut data = Vec::with_capacity((n + w - 1) * m);
    for _ in 0..w - 1 {
        data.extend_from_slice(series.row(0));
    }
    data.extend_from_slice(series.data());
    Tensor::from_vec(&[n + w - 1, m], data)
}

/// A `w x m` normalized window ending at cycle `cycle` of engine `unit_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub unit_id: u32,
    /// 1-based cycle of the window's last row.
    pub cycle: usize,
    pub window: Tensor,
    pub label: f64,
}

fn check_window_lengths(padded: &Tensor, w: usize, labels: &[f64]) -> Result<()> {
    if w < 1 || labels.is_empty() || padded.rows() != labels.len() + w - 1 {
        return Err(Error::Shape(format!(
            "padded length {} does not equal n + w - 1 for n = {}, w = {w}",
            padded.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// Splits a padded series into `n` windows, window `j` covering padded rows
/// `j..j+w-1`.
pub fn make_windows(
    padded: &Tensor,
    w: usize,
    labels: &[f64],
    unit_id: u32,
) -> Result<Vec<WindowedSample>> {
    check_window_lengths(padded, w, labels)?;
    let m = padded.row_len();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(j, &label)| WindowedSample {
            unit_id,
            cycle: j + 1,
            window: Tensor::from_vec(&[w, m], padded.data()[j * m..(j + w) * m].to_vec())
                .expect("slice length is w*m"),
            label,
        })
        .collect())
}

/// One engine's padded, normalized series with per-cycle labels. Windows are
/// borrowed slices of the padded buffer.
#[derive(Debug, Clone)]
pub struct EngineSeries {
    pub unit_id: u32,
    pub w: usize,
    pub padded: Tensor,
    pub labels: Vec<f64>,
}

impl EngineSeries {
    pub fn new(unit_id: u32, padded: Tensor, w: usize, labels: Vec<f64>) -> Result<Self> {
        check_window_lengths(&padded, w, &labels)?;
        Ok(Self {
            unit_id,
            w,
            padded,
            labels,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.padded.row_len()
    }

    /// Row-major `w x m` window ending at 0-based cycle index `j`.
    pub fn window(&self, j: usize) -> &[f64] {
        let m = self.m();
        &self.padded.data()[j * m..(j + self.w) * m]
    }
}

/// Everything needed to turn raw trajectories into model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub selection: SensorSelection,
    pub scaler: Scaler,
    pub policy: LabelPolicy,
    pub w: usize,
}

impl Preprocessor {
    /// Fits the scaler on `train`.
    pub fn fit(
        train: &[EngineTrajectory],
        selection: SensorSelection,
        policy: LabelPolicy,
        w: usize,
    ) -> Result<Self> {
        let scaler = fit_scaler(train, &selection)?;
        Ok(Self {
            selection,
            scaler,
            policy,
            w,
        })
    }

    /// Normalized, padded series with labels that count down to
    /// `terminal_rul` at the last cycle.
    pub fn series(&self, traj: &EngineTrajectory, terminal_rul: i64) -> Result<EngineSeries> {
        let scaled = apply_scaler(traj, &self.scaler, &self.selection)?;
        let padded = pad_series(&scaled, self.w)?;
        let labels = assign_rul_labels(traj.len(), self.policy, terminal_rul)?;
        EngineSeries::new(traj.unit_id, padded, self.w, labels)
    }

    pub fn windows(&self, traj: &EngineTrajectory, terminal_rul: i64) -> Result<Vec<WindowedSample>> {
        let s = self.series(traj, terminal_rul)?;
        make_windows(&s.padded, self.w, &s.labels, traj.unit_id)
    }
}

/// Debug dump of windows: a header row, then `w` rows per window keyed by
/// (unit, cycle, row).
pub fn write_windows_csv<W: Write>(
    mut out: W,
    samples: &[WindowedSample],
    columns: &[Column],
) -> std::io::Result<()> {
    write!(out, "unit_id,cycle,row,label")?;
    for c in columns {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for s in samples {
        for r in 0..s.window.rows() {
            write!(out, "{},{},{},{}", s.unit_id, s.cycle, r + 1, s.label)?;
            for v in s.window.row(r) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
