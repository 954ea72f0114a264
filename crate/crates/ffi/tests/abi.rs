use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use tddn_ffi::*;

fn last_error() -> String {
    let p = tddn_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn quick_options() -> TddnTrainOptions {
    TddnTrainOptions {
        window: 16,
        depth: 2,
        epochs: 2,
        seed: 5,
        ..tddn_train_options_default()
    }
}

fn synthetic(engines: usize) -> *mut TddnDataset {
    let subset = CString::new("FD001").unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { tddn_dataset_synthetic(subset.as_ptr(), engines, 3, &mut ds) };
    assert_eq!(st, TddnStatus::Ok);
    ds
}

#[test]
fn metrics_through_the_abi() {
    let e = [3.0, -4.0];
    let mut out = 0.0;
    assert_eq!(unsafe { tddn_rmse(e.as_ptr(), 2, &mut out) }, TddnStatus::Ok);
    assert!((out - 12.5f64.sqrt()).abs() < 1e-15);
    let direct = ((3.0f64 / 10.0).exp() - 1.0) + ((4.0f64 / 13.0).exp() - 1.0);
    assert_eq!(unsafe { tddn_nasa_score(e.as_ptr(), 2, &mut out) }, TddnStatus::Ok);
    assert!((out - direct).abs() < 1e-12);

    assert_eq!(unsafe { tddn_rmse(e.as_ptr(), 0, &mut out) }, TddnStatus::InvalidArgument);
    assert_eq!(unsafe { tddn_rmse(ptr::null(), 2, &mut out) }, TddnStatus::NullPointer);
    assert!(last_error().contains("errors"));
}

#[test]
fn bad_inputs_report_status_and_message() {
    let dir = CString::new("/definitely/not/here").unwrap();
    let subset = CString::new("FD001").unwrap();
    let bad_subset = CString::new("FD009").unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { tddn_dataset_load(dir.as_ptr(), subset.as_ptr(), &mut ds) };
    assert_eq!(st, TddnStatus::Io);
    assert!(last_error().contains("/definitely/not/here"));
    assert!(ds.is_null());
    let st = unsafe { tddn_dataset_load(dir.as_ptr(), bad_subset.as_ptr(), &mut ds) };
    assert_eq!(st, TddnStatus::InvalidArgument);
    let st = unsafe { tddn_dataset_load(dir.as_ptr(), subset.as_ptr(), ptr::null_mut()) };
    assert_eq!(st, TddnStatus::NullPointer);

    let path = CString::new("/definitely/not/here.tddn").unwrap();
    let mut model = ptr::null_mut();
    assert_ne!(unsafe { tddn_model_load(path.as_ptr(), &mut model) }, TddnStatus::Ok);

    // freeing null is a no-op
    unsafe {
        tddn_dataset_free(ptr::null_mut());
        tddn_model_free(ptr::null_mut());
    }
}

#[test]
fn train_save_load_predict_evaluate() {
    let ds = synthetic(6);
    let (mut ntr, mut nte) = (0, 0);
    assert_eq!(unsafe { tddn_dataset_counts(ds, &mut ntr, &mut nte) }, TddnStatus::Ok);
    assert_eq!((ntr, nte), (6, 6));

    let opts = quick_options();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { tddn_model_train(ds, &opts, &mut model) }, TddnStatus::Ok);

    let (mut w, mut m) = (0, 0);
    assert_eq!(unsafe { tddn_model_shape(model, &mut w, &mut m) }, TddnStatus::Ok);
    assert_eq!((w, m), (16, 15));
    let window = vec![0.1; w * m];
    let mut pred = -1.0;
    assert_eq!(
        unsafe { tddn_model_predict_window(model, window.as_ptr(), window.len(), &mut pred) },
        TddnStatus::Ok
    );
    assert!((0.0..=120.0).contains(&pred));
    assert_eq!(
        unsafe { tddn_model_predict_window(model, window.as_ptr(), 3, &mut pred) },
        TddnStatus::Shape
    );

    let (mut rmse, mut score) = (0.0, 0.0);
    assert_eq!(
        unsafe { tddn_model_evaluate(model, ds, true, &mut rmse, &mut score) },
        TddnStatus::Ok
    );
    assert!(rmse.is_finite() && score.is_finite());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.tddn").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tddn_model_save(model, path.as_ptr()) }, TddnStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { tddn_model_load(path.as_ptr(), &mut loaded) }, TddnStatus::Ok);
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(tddn_model_predict_test_engine(model, ds, 1, &mut a), TddnStatus::Ok);
        assert_eq!(tddn_model_predict_test_engine(loaded, ds, 1, &mut b), TddnStatus::Ok);
        assert_eq!(tddn_model_predict_test_engine(loaded, ds, 99, &mut b), TddnStatus::InvalidArgument);
    }
    assert_eq!(a.to_bits(), b.to_bits());

    // flip one byte: the digest check must reject it
    let p = dir.path().join("m.tddn");
    let mut bytes = std::fs::read(&p).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&p, bytes).unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { tddn_model_load(path.as_ptr(), &mut bad) }, TddnStatus::Checkpoint);

    unsafe {
        tddn_model_free(loaded);
        tddn_model_free(model);
        tddn_dataset_free(ds);
    }
}

#[test]
fn invalid_options_are_rejected() {
    let ds = synthetic(3);
    let mut opts = quick_options();
    opts.depth = 0;
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { tddn_model_train(ds, &opts, &mut model) }, TddnStatus::InvalidArgument);
    opts.depth = 3;
    opts.window = 4;
    assert_eq!(unsafe { tddn_model_train(ds, &opts, &mut model) }, TddnStatus::InvalidArgument);
    assert!(last_error().contains("window"));
    assert!(model.is_null());
    unsafe { tddn_dataset_free(ds) };
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/tddn.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "TDDN_STATUS_OK",
        "typedef struct TddnModel TddnModel",
        "tddn_model_train",
        "tddn_last_error_message",
        "TddnTrainOptions",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tddn.h\"\nint main(void) { TddnTrainOptions o = tddn_train_options_default(); return o.window == 64 ? TDDN_STATUS_OK : 1; }\n",
    )
    .unwrap();
    // syntax and type check only; linking is covered by the Rust tests
    let cc = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output();
    match cc {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler available, skipped compile check: {e}"),
    }
}
