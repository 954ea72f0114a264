//! CSV export of per-window temporal features, abstract features and
//! attention weights for one engine.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cmapss::EngineTrajectory;
use crate::error::{Error, Result};
use crate::model::{Diagnostics, PREDICT_CHUNK};
use crate::training::TrainedModel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub temporal: PathBuf,
    pub abstract_features: PathBuf,
    pub attention: PathBuf,
    pub windows: usize,
}

/// Diagnostics for every window of `traj`, in cycle order.
pub fn engine_diagnostics(tm: &TrainedModel, traj: &EngineTrajectory) -> Result<Vec<Diagnostics>> {
    let series = tm.preprocessor.series(traj, 0)?;
    let idx: Vec<usize> = (0..series.num_windows()).collect();
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let wins: Vec<&[f64]> = chunk.iter().map(|&j| series.window(j)).collect();
        let trace = tm.model.forward_batch(&wins)?;
        out.extend((0..chunk.len()).map(|b| trace.diagnostics(&tm.model.config, b)));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn header<W: Write>(out: &mut W, keys: &str, prefix: &str, n: usize) -> std::io::Result<()> {
    write!(out, "{keys}")?;
    for k in 1..=n {
        write!(out, ",{prefix}{k}")?;
    }
    writeln!(out)
}

/// Writes `temporal.csv` and `abstract.csv` (keyed by window and row) and
/// `attention.csv` (one row of `w` weights per window) into `dir`.
pub fn export_features(tm: &TrainedModel, traj: &EngineTrajectory, dir: &Path) -> Result<ExportedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let diags = engine_diagnostics(tm, traj)?;
    let files = ExportedFiles {
        temporal: dir.join("temporal.csv"),
        abstract_features: dir.join("abstract.csv"),
        attention: dir.join("attention.csv"),
        windows: diags.len(),
    };
    let c = &tm.model.config;
    let write_all = || -> std::io::Result<()> {
        let mut t = create(&files.temporal).map_err(std::io::Error::other)?;
        let mut a = create(&files.abstract_features).map_err(std::io::Error::other)?;
        let mut l = create(&files.attention).map_err(std::io::Error::other)?;
        header(&mut t, "window,row", "ch", c.temporal_channels())?;
        header(&mut a, "window,row", "f", c.m)?;
        header(&mut l, "window", "lambda_", c.w)?;
        for (j, d) in diags.iter().enumerate() {
            for (out, mat) in [(&mut t, &d.temporal), (&mut a, &d.abstract_features)] {
                for r in 0..mat.rows() {
                    write!(out, "{},{}", j + 1, r + 1)?;
                    for v in mat.row(r) {
                        write!(out, ",{v:?}")?;
                    }
                    writeln!(out)?;
                }
            }
            write!(l, "{}", j + 1)?;
            for v in &d.attention.weights {
                write!(l, ",{v:?}")?;
            }
            writeln!(l)?;
        }
        t.flush()?;
        a.flush()?;
        l.flush()
    };
    write_all().map_err(|e| Error::io(dir, e))?;
    Ok(files)
}
