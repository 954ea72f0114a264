//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that need the official C-MAPSS files read them from the directory
//! in `CMAPSS_DIR`; without it they print NOT RUN. The full-budget criteria
//! (200-epoch, multi-seed) additionally need `TDDN_ACCEPT_FULL=1`. Lines
//! tagged `synthetic` exercise the same checks on a generated fleet in the
//! C-MAPSS layout and do not stand in for the official-data results.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tddn::cmapss::{load_subset, DatasetBundle, SubsetId};
use tddn::metrics::{evaluate_test, nasa_score, rmse, EvalOptions};
use tddn::model::{TddnConfig, TddnModel};
use tddn::preprocess::{select_columns, LabelPolicy, Preprocessor};
use tddn::synthetic::{generate, SyntheticSpec};
use tddn::training::{train, TrainConfig, Trainer};

// Tolerances and budgets.
const AC1_DRAWS: u64 = 100;
const AC1_TIME_LIMIT_S: f64 = 60.0;
const AC2_VECTORS: usize = 1000;
const AC2_TOL: f64 = 1e-12;
const AC3_ATTENTION_TOL: f64 = 1e-9;
const AC3_TRAIN_COUNTS: [usize; 4] = [100, 260, 100, 259];
const AC3_TEST_COUNTS: [usize; 4] = [100, 259, 100, 248];
const AC4_WINDOWS: usize = 10;
const AC4_STEPS: usize = 500;
const AC4_LR: f64 = 1e-3;
const AC4_MSE: f64 = 1.0;
const AC5_EPOCHS: usize = 20;
const AC5_SEED: u64 = 7;
const AC5_MAX_RMSE: f64 = 25.0;
const AC5_MIN_IMPROVEMENT: f64 = 0.40;
const AC6_SEEDS: u64 = 5;
const AC6_FD001_MAX_RMSE: f64 = 13.0;
const AC6_FD004_MAX_RMSE: f64 = 18.0;
const AC8_WINDOWS: [usize; 4] = [16, 32, 48, 64];
const AC8_SEEDS: u64 = 3;

enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Line {
    id: &'static str,
    status: Status,
    detail: String,
    /// Optional stretch goals are reported but never fail the run.
    optional: bool,
}

fn line(id: &'static str, ok: bool, detail: String) -> Line {
    Line {
        id,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
        optional: false,
    }
}

fn not_run(id: &'static str, why: &str) -> Line {
    Line {
        id,
        status: Status::NotRun,
        detail: why.to_string(),
        optional: false,
    }
}

fn guarded(id: &'static str, f: impl FnOnce() -> Vec<Line>) -> Vec<Line> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        vec![line(id, false, format!("panicked: {msg}"))]
    })
}

fn official_dir() -> Option<PathBuf> {
    std::env::var_os("CMAPSS_DIR").map(PathBuf::from)
}

fn full_budget() -> bool {
    std::env::var("TDDN_ACCEPT_FULL").is_ok_and(|v| v == "1")
}

const NEEDS_DATA: &str = "needs official data: set CMAPSS_DIR";
const NEEDS_FULL: &str = "needs official data and TDDN_ACCEPT_FULL=1 (hours of CPU)";

fn ac1() -> Vec<Line> {
    let start = Instant::now();
    let mut worst_layer = (0.0, "");
    let mut worst_model: f64 = 0.0;
    for seed in 0..AC1_DRAWS {
        for (name, e) in common::layer_gradient_errors(seed) {
            if e > worst_layer.0 {
                worst_layer = (e, name);
            }
        }
        worst_model = worst_model.max(common::model_gradient_error(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_layer.0 <= common::GRAD_TOL && worst_model <= common::GRAD_TOL && secs < AC1_TIME_LIMIT_S;
    vec![line(
        "AC1 gradient correctness",
        ok,
        format!(
            "{AC1_DRAWS} draws, worst layer rel err {:.2e} ({}), worst model rel err {worst_model:.2e}, tol {:.0e}, {secs:.1}s (limit {AC1_TIME_LIMIT_S}s)",
            worst_layer.0, worst_layer.1, common::GRAD_TOL
        ),
    )]
}

fn ac2() -> Vec<Line> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..AC2_VECTORS {
        let n = rng.gen_range(1..200);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-60.0..60.0)).collect();
        let mut sq = 0.0;
        let mut s = 0.0;
        for &x in &d {
            sq += x * x;
            s += if x < 0.0 { (-x / 13.0).exp() - 1.0 } else { (x / 10.0).exp() - 1.0 };
        }
        let oracle_rmse = (sq / n as f64).sqrt();
        let e1 = (rmse(&d).unwrap() - oracle_rmse).abs() / oracle_rmse.max(1.0);
        let e2 = (nasa_score(&d).unwrap() - s).abs() / s.abs().max(1.0);
        worst = worst.max(e1).max(e2);
    }
    let asym = (1..=50).all(|x| {
        let x = x as f64;
        nasa_score(&[x]).unwrap() > nasa_score(&[-x]).unwrap()
    });
    vec![line(
        "AC2 metric oracles",
        worst <= AC2_TOL && asym,
        format!("{AC2_VECTORS} vectors, worst rel diff {worst:.2e} (tol {AC2_TOL:.0e}); late-penalty asymmetry for x in 1..=50: {asym}"),
    )]
}

/// Windows per engine, scaled training range and attention normalization on
/// one bundle. Returns a description of the first violation.
fn pipeline_invariants(bundle: &DatasetBundle) -> Result<String, String> {
    let w = 64;
    let prep = Preprocessor::fit(&bundle.train, select_columns(bundle.subset), LabelPolicy::default(), w)
        .map_err(|e| e.to_string())?;
    let model = TddnModel::new(TddnConfig::new(w, prep.selection.m(), 0)).map_err(|e| e.to_string())?;
    let mut windows = 0;
    let mut max_abs: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for (k, traj) in bundle.train.iter().chain(&bundle.test).enumerate() {
        let series = prep.series(traj, 0).map_err(|e| e.to_string())?;
        if series.num_windows() != traj.len() {
            return Err(format!("engine {} has {} cycles but {} windows", traj.unit_id, traj.len(), series.num_windows()));
        }
        windows += series.num_windows();
        if k < bundle.train.len() {
            max_abs = series.padded.data().iter().fold(max_abs, |a, v| a.max(v.abs()));
        }
        // attention on a sample of windows per engine keeps this quick
        let idx: Vec<usize> = (0..series.num_windows()).step_by(25).collect();
        let wins: Vec<&[f64]> = idx.iter().map(|&j| series.window(j)).collect();
        let trace = model.forward_batch(&wins).map_err(|e| e.to_string())?;
        for b in 0..wins.len() {
            let s: f64 = trace.diagnostics(&model.config, b).attention.weights.iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
    }
    if max_abs > 1.0 {
        return Err(format!("scaled training value {max_abs} outside [-1, 1]"));
    }
    if worst_sum > AC3_ATTENTION_TOL {
        return Err(format!("attention row sums off by {worst_sum:e}"));
    }
    Ok(format!("{windows} windows, max |scaled train| {max_abs}, worst |sum-1| {worst_sum:.1e}"))
}

fn ac3() -> Vec<Line> {
    let mut out = Vec::new();
    let mut details = Vec::new();
    let mut ok = true;
    for s in SubsetId::ALL {
        let bundle = generate(&SyntheticSpec::like_official(s, 3)).unwrap();
        match pipeline_invariants(&bundle) {
            Ok(d) => details.push(format!("{s}: {d}")),
            Err(e) => {
                ok = false;
                details.push(format!("{s}: {e}"));
            }
        }
    }
    out.push(line("AC3 pipeline invariants (synthetic)", ok, details.join("; ")));

    let Some(dir) = official_dir() else {
        out.push(not_run("AC3 pipeline invariants (official)", NEEDS_DATA));
        return out;
    };
    let mut ok = true;
    let mut details = Vec::new();
    for (i, s) in SubsetId::ALL.into_iter().enumerate() {
        match load_subset(&dir, s) {
            Err(e) => {
                ok = false;
                details.push(format!("{s}: {e}"));
            }
            Ok(b) => {
                let counts = (b.train.len(), b.test.len());
                let want = (AC3_TRAIN_COUNTS[i], AC3_TEST_COUNTS[i]);
                if counts != want {
                    ok = false;
                }
                let inv = pipeline_invariants(&b);
                ok &= inv.is_ok();
                details.push(format!(
                    "{s}: engines {}/{} (want {}/{}), {}",
                    counts.0,
                    counts.1,
                    want.0,
                    want.1,
                    inv.unwrap_or_else(|e| e)
                ));
            }
        }
    }
    out.push(line("AC3 pipeline invariants (official)", ok, details.join("; ")));
    out
}

fn ac4() -> Vec<Line> {
    let bundle = generate(&SyntheticSpec::small(SubsetId::Fd001, 4, 11)).unwrap();
    let prep = Preprocessor::fit(&bundle.train, select_columns(SubsetId::Fd001), LabelPolicy::default(), 64).unwrap();
    let mut wins = Vec::new();
    let mut labels = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    while wins.len() < AC4_WINDOWS {
        let t = &bundle.train[wins.len() % bundle.train.len()];
        let s = prep.series(t, 0).unwrap();
        let j = rng.gen_range(0..s.num_windows());
        wins.push(s.window(j).to_vec());
        labels.push(s.labels[j]);
    }
    let refs: Vec<&[f64]> = wins.iter().map(Vec::as_slice).collect();
    let model = TddnModel::new(TddnConfig::new(64, prep.selection.m(), 4)).unwrap();
    let cfg = TrainConfig::default();
    let mut trainer = Trainer::new(model, &cfg);
    let mse = |t: &Trainer| {
        let p = t.model.predict_batch(&refs).unwrap();
        p.iter().zip(&labels).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
    };
    let initial = mse(&trainer);
    let mut reached = None;
    let mut last = initial;
    for step in 1..=AC4_STEPS {
        trainer.step(&refs, &labels, AC4_LR).unwrap();
        last = mse(&trainer);
        if last < AC4_MSE {
            reached = Some(step);
            break;
        }
    }
    vec![line(
        "AC4 capacity sanity",
        reached.is_some(),
        match reached {
            Some(s) => format!("{AC4_WINDOWS} windows, MSE {initial:.1} -> {last:.3} after {s} Adam steps (lr {AC4_LR}, limit {AC4_STEPS})"),
            None => format!("MSE {initial:.1} -> {last:.3} after {AC4_STEPS} steps, never below {AC4_MSE}"),
        },
    )]
}

/// Brute-force constant predictor RMSE straight from the RUL file text.
fn constant_rmse(rul_file: &Path, constant: f64, cap: f64) -> f64 {
    let text = std::fs::read_to_string(rul_file).unwrap();
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().unwrap().min(cap))
        .collect();
    (vals.iter().map(|v| (constant - v).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
}

fn baseline_beat(id: &'static str, dir: &Path) -> Line {
    let bundle = match load_subset(dir, SubsetId::Fd001) {
        Ok(b) => b,
        Err(e) => return line(id, false, e.to_string()),
    };
    let cfg = TrainConfig {
        max_epochs: AC5_EPOCHS,
        seed: AC5_SEED,
        ..TrainConfig::default()
    };
    let sel = select_columns(SubsetId::Fd001);
    let start = Instant::now();
    let (tm, report) = train(&bundle, sel.clone(), TddnConfig::new(64, sel.m(), AC5_SEED), &cfg).unwrap();
    let r = evaluate_test(&tm.model, &bundle, &tm.preprocessor, EvalOptions::default()).unwrap();
    let base = constant_rmse(&dir.join("RUL_FD001.txt"), 120.0, 120.0);
    let improvement = 1.0 - r.rmse / base;
    line(
        id,
        r.rmse <= AC5_MAX_RMSE && improvement >= AC5_MIN_IMPROVEMENT,
        format!(
            "test RMSE {:.3} (limit {AC5_MAX_RMSE}), constant-120 RMSE {base:.3}, improvement {:.1}% (need {:.0}%), score {:.1}, best epoch {}/{}, {:.0}s",
            r.rmse,
            100.0 * improvement,
            100.0 * AC5_MIN_IMPROVEMENT,
            r.score,
            report.best_epoch,
            report.epochs.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn ac5() -> Vec<Line> {
    let mut out = Vec::new();
    let tmp = tempfile::tempdir().unwrap();
    // half the official fleet size keeps the default run under ten minutes
    let spec = SyntheticSpec {
        train_engines: 50,
        test_engines: 50,
        ..SyntheticSpec::like_official(SubsetId::Fd001, 5)
    };
    let bundle = generate(&spec).unwrap();
    tddn::cmapss::save_subset(tmp.path(), &bundle).unwrap();
    out.push(baseline_beat("AC5 baseline beat (synthetic)", tmp.path()));
    match official_dir() {
        Some(dir) => out.push(baseline_beat("AC5 baseline beat (official)", &dir)),
        None => out.push(not_run("AC5 baseline beat (official)", NEEDS_DATA)),
    }
    out
}

/// Mean test RMSE over seeds 0..seeds with the default protocol.
fn mean_rmse(bundle: &DatasetBundle, w: usize, seeds: u64) -> (f64, Vec<f64>) {
    let sel = select_columns(bundle.subset);
    let runs: Vec<f64> = (0..seeds)
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let (tm, _) = train(bundle, sel.clone(), TddnConfig::new(w, sel.m(), seed), &cfg).unwrap();
            evaluate_test(&tm.model, bundle, &tm.preprocessor, EvalOptions::default())
                .unwrap()
                .rmse
        })
        .collect();
    (runs.iter().sum::<f64>() / runs.len() as f64, runs)
}

fn ac6() -> Vec<Line> {
    let (Some(dir), true) = (official_dir(), full_budget()) else {
        return vec![not_run("AC6 full-budget reproduction", NEEDS_FULL)];
    };
    let mut out = Vec::new();
    for (subset, limit, optional) in [
        (SubsetId::Fd001, AC6_FD001_MAX_RMSE, false),
        (SubsetId::Fd004, AC6_FD004_MAX_RMSE, true),
    ] {
        let id = if optional { "AC6 full-budget reproduction FD004 (optional)" } else { "AC6 full-budget reproduction FD001" };
        let mut l = match load_subset(&dir, subset) {
            Err(e) => line(id, false, e.to_string()),
            Ok(b) => {
                let (mean, runs) = mean_rmse(&b, 64, AC6_SEEDS);
                line(id, mean <= limit, format!("mean RMSE {mean:.3} over {AC6_SEEDS} seeds {runs:.3?} (limit {limit})"))
            }
        };
        l.optional = optional;
        out.push(l);
    }
    out
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tddn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "tddn {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Trains and evaluates twice through the CLI, the second time from the
/// first run's manifest, and compares every produced artifact byte for byte.
fn determinism(id: &'static str, data: &Path, epochs: &str) -> Line {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let data = data.to_str().unwrap();
    let a_s = a.to_str().unwrap();
    let b_s = b.to_str().unwrap();
    let ea = a.join("eval");
    let eb = b.join("eval");
    run_cli(&["train", "--subset", "FD001", "--data", data, "--out", a_s, "--epochs", epochs, "--seed", "3"]);
    let manifest = a.join("manifest.txt");
    run_cli(&["train", "--config", manifest.to_str().unwrap(), "--out", b_s]);
    for (run, eval) in [(&a, &ea), (&b, &eb)] {
        let ckpt = run.join("checkpoint.tddn");
        run_cli(&["evaluate", "--data", data, "--checkpoint", ckpt.to_str().unwrap(), "--out", eval.to_str().unwrap()]);
    }
    let without_out = |dir: &Path| -> Vec<String> {
        std::fs::read_to_string(dir.join("manifest.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out="))
            .map(String::from)
            .collect()
    };
    if without_out(&a) != without_out(&b) {
        return line(id, false, "replayed manifest differs from the original".into());
    }
    let files = ["train_log.csv", "checkpoint.tddn", "train_summary.txt", "eval/predictions.csv", "eval/metrics.txt"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .collect();
    line(
        id,
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts bit-identical across two runs", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn ac7() -> Vec<Line> {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = generate(&SyntheticSpec::small(SubsetId::Fd001, 12, 7)).unwrap();
    tddn::cmapss::save_subset(tmp.path(), &bundle).unwrap();
    let mut out = vec![determinism("AC7 determinism (synthetic)", tmp.path(), "2")];
    match official_dir() {
        Some(dir) => out.push(determinism("AC7 determinism (official)", &dir, "2")),
        None => out.push(not_run("AC7 determinism (official)", NEEDS_DATA)),
    }
    out
}

fn ac8() -> Vec<Line> {
    let id = "AC8 window sweep direction";
    let (Some(dir), true) = (official_dir(), full_budget()) else {
        return vec![not_run(id, NEEDS_FULL)];
    };
    let bundle = match load_subset(&dir, SubsetId::Fd001) {
        Ok(b) => b,
        Err(e) => return vec![line(id, false, e.to_string())],
    };
    let means: Vec<(usize, f64)> = AC8_WINDOWS
        .iter()
        .map(|&w| (w, mean_rmse(&bundle, w, AC8_SEEDS).0))
        .collect();
    let at = |w| means.iter().find(|m| m.0 == w).unwrap().1;
    vec![line(
        id,
        at(64) <= at(16),
        format!("mean RMSE by window over {AC8_SEEDS} seeds: {means:.3?}"),
    )]
}

fn main() {
    type Criterion = (&'static str, fn() -> Vec<Line>);
    let criteria: [Criterion; 8] = [
        ("AC1 gradient correctness", ac1),
        ("AC2 metric oracles", ac2),
        ("AC3 pipeline invariants", ac3),
        ("AC4 capacity sanity", ac4),
        ("AC5 baseline beat", ac5),
        ("AC6 full-budget reproduction", ac6),
        ("AC7 determinism", ac7),
        ("AC8 window sweep direction", ac8),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        for l in guarded(id, f) {
            let tag = match l.status {
                Status::Pass => "PASS",
                Status::Fail if l.optional => "FAIL (optional)",
                Status::Fail => {
                    failed += 1;
                    "FAIL"
                }
                Status::NotRun => "NOT RUN",
            };
            println!("{tag:<8} {}: {}", l.id, l.detail);
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
