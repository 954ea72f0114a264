//! C ABI over the `tddn` crate.
//!
//! Datasets and models are opaque handles created by `*_load`/`*_train`
//! functions and released with the matching `*_free`. Every function returns a
//! [`TddnStatus`]; on failure, [`tddn_last_error_message`] describes the error
//! for the calling thread. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tddn::cmapss::{DatasetBundle, SubsetId};
use tddn::metrics::{evaluate_test, EvalOptions};
use tddn::model::{conv_channels_for_depth, TddnConfig, DEFAULT_CONV_CHANNELS, DEFAULT_WINDOW};
use tddn::preprocess::select_columns_with;
use tddn::synthetic::{generate, SyntheticSpec};
use tddn::training::{train, TrainConfig, TrainedModel};
use tddn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TddnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    Checkpoint = 6,
    Training = 7,
    Panic = 8,
}

/// Loaded C-MAPSS subset (train, test and RUL files).
pub struct TddnDataset(DatasetBundle);

/// Trained network together with its preprocessing.
pub struct TddnModel(TrainedModel);

/// Training settings. Start from [`tddn_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TddnTrainOptions {
    pub window: usize,
    /// Number of conv/pool stages.
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub r_max: f64,
    pub seed: u64,
    pub include_sensor_14: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TddnStatus {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => TddnStatus::Io,
        Error::Parse { .. } | Error::Structural(_) => TddnStatus::Parse,
        Error::UnknownSubset(_) | Error::InvalidArgument(_) => TddnStatus::InvalidArgument,
        Error::Shape(_) | Error::NoForwardPass => TddnStatus::Shape,
        Error::NonFiniteLoss { .. } => TddnStatus::Training,
        Error::Checkpoint(_) => TddnStatus::Checkpoint,
    }
}

struct Fail(TddnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TddnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TddnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TddnStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(TddnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TddnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tddn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tddn_train_options_default() -> TddnTrainOptions {
    let t = TrainConfig::default();
    TddnTrainOptions {
        window: DEFAULT_WINDOW,
        depth: DEFAULT_CONV_CHANNELS.len(),
        epochs: t.max_epochs,
        batch_size: t.batch_size,
        lr: t.lr,
        patience: t.patience,
        r_max: t.r_max,
        seed: t.seed,
        include_sensor_14: false,
    }
}

/// Loads `train_FDxxx.txt`, `test_FDxxx.txt` and `RUL_FDxxx.txt` from `dir`.
/// `subset` is e.g. "FD001".
#[no_mangle]
pub unsafe extern "C" fn tddn_dataset_load(
    dir: *const c_char,
    subset: *const c_char,
    out: *mut *mut TddnDataset,
) -> TddnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let subset: SubsetId = str_arg(subset, "subset")?.parse()?;
        let bundle = tddn::load_subset(&dir, subset)?;
        *out = Box::into_raw(Box::new(TddnDataset(bundle)));
        Ok(())
    })
}

/// Generates a synthetic fleet with `engines` engines per split.
#[no_mangle]
pub unsafe extern "C" fn tddn_dataset_synthetic(
    subset: *const c_char,
    engines: usize,
    seed: u64,
    out: *mut *mut TddnDataset,
) -> TddnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let subset: SubsetId = str_arg(subset, "subset")?.parse()?;
        let bundle = generate(&SyntheticSpec::small(subset, engines, seed))?;
        *out = Box::into_raw(Box::new(TddnDataset(bundle)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tddn_dataset_counts(
    dataset: *const TddnDataset,
    train_engines: *mut usize,
    test_engines: *mut usize,
) -> TddnStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.0;
        *out_arg(train_engines, "train_engines")? = ds.train.len();
        *out_arg(test_engines, "test_engines")? = ds.test.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tddn_dataset_free(dataset: *mut TddnDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on the dataset's training split. `options` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn tddn_model_train(
    dataset: *const TddnDataset,
    options: *const TddnTrainOptions,
    out: *mut *mut TddnModel,
) -> TddnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = &ref_arg(dataset, "dataset")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| tddn_train_options_default());
        if o.depth < 1 {
            return Err(Fail(TddnStatus::InvalidArgument, "depth must be >= 1".into()));
        }
        let selection = select_columns_with(ds.subset, o.include_sensor_14);
        let cfg = TddnConfig::new(o.window, selection.m(), o.seed)
            .with_conv_channels(conv_channels_for_depth(o.depth));
        let tc = TrainConfig {
            batch_size: o.batch_size,
            max_epochs: o.epochs,
            lr: o.lr,
            patience: o.patience,
            seed: o.seed,
            r_max: o.r_max,
            ..TrainConfig::default()
        };
        let (tm, _) = train(ds, selection, cfg, &tc)?;
        *out = Box::into_raw(Box::new(TddnModel(tm)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tddn_model_save(model: *const TddnModel, path: *const c_char) -> TddnStatus {
    guard(|| {
        let tm = &ref_arg(model, "model")?.0;
        let path = PathBuf::from(str_arg(path, "path")?);
        tddn::checkpoint::save(&path, tm)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tddn_model_load(path: *const c_char, out: *mut *mut TddnModel) -> TddnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let tm = tddn::checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(TddnModel(tm)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tddn_model_free(model: *mut TddnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length `w` and columns per cycle `m` expected by
/// [`tddn_model_predict_window`].
#[no_mangle]
pub unsafe extern "C" fn tddn_model_shape(
    model: *const TddnModel,
    window: *mut usize,
    columns: *mut usize,
) -> TddnStatus {
    guard(|| {
        let c = &ref_arg(model, "model")?.0.model.config;
        *out_arg(window, "window")? = c.w;
        *out_arg(columns, "columns")? = c.m;
        Ok(())
    })
}

/// RUL prediction, clamped to `[0, R_max]`, for one already-scaled window of
/// `w * m` values in row-major (cycle, column) order.
#[no_mangle]
pub unsafe extern "C" fn tddn_model_predict_window(
    model: *const TddnModel,
    values: *const f64,
    len: usize,
    out: *mut f64,
) -> TddnStatus {
    guard(|| {
        let tm = &ref_arg(model, "model")?.0;
        let values = slice_arg(values, len, "values")?;
        let out = out_arg(out, "out")?;
        let pred = tm.model.predict_batch(&[values])?[0];
        *out = tm.preprocessor.policy.clamp(pred);
        Ok(())
    })
}

/// Clamped prediction from the last-cycle window of test engine `unit_id`.
#[no_mangle]
pub unsafe extern "C" fn tddn_model_predict_test_engine(
    model: *const TddnModel,
    dataset: *const TddnDataset,
    unit_id: u32,
    out: *mut f64,
) -> TddnStatus {
    guard(|| {
        let tm = &ref_arg(model, "model")?.0;
        let ds = &ref_arg(dataset, "dataset")?.0;
        let out = out_arg(out, "out")?;
        let traj = ds.test_engine(unit_id).ok_or_else(|| {
            Fail(TddnStatus::InvalidArgument, format!("no test engine {unit_id}"))
        })?;
        *out = tm.model.predict_last(traj, &tm.preprocessor)?;
        Ok(())
    })
}

/// Test-split RMSE and score from each engine's last-cycle window.
#[no_mangle]
pub unsafe extern "C" fn tddn_model_evaluate(
    model: *const TddnModel,
    dataset: *const TddnDataset,
    cap_true_rul: bool,
    rmse: *mut f64,
    score: *mut f64,
) -> TddnStatus {
    guard(|| {
        let tm = &ref_arg(model, "model")?.0;
        let ds = &ref_arg(dataset, "dataset")?.0;
        let rmse = out_arg(rmse, "rmse")?;
        let score = out_arg(score, "score")?;
        if ds.subset != tm.preprocessor.selection.subset {
            return Err(Fail(
                TddnStatus::InvalidArgument,
                format!(
                    "model trained on {}, dataset is {}",
                    tm.preprocessor.selection.subset, ds.subset
                ),
            ));
        }
        let r = evaluate_test(&tm.model, ds, &tm.preprocessor, EvalOptions { cap_true_rul })?;
        *rmse = r.rmse;
        *score = r.score;
        Ok(())
    })
}

/// Root mean squared error of `len` errors (prediction minus truth).
#[no_mangle]
pub unsafe extern "C" fn tddn_rmse(errors: *const f64, len: usize, out: *mut f64) -> TddnStatus {
    guard(|| {
        let e = slice_arg(errors, len, "errors")?;
        *out_arg(out, "out")? = tddn::rmse(e)?;
        Ok(())
    })
}

/// Asymmetric score: late predictions are penalized more than early ones.
#[no_mangle]
pub unsafe extern "C" fn tddn_nasa_score(errors: *const f64, len: usize, out: *mut f64) -> TddnStatus {
    guard(|| {
        let e = slice_arg(errors, len, "errors")?;
        *out_arg(out, "out")? = tddn::nasa_score(e)?;
        Ok(())
    })
}
