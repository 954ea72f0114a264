//! `tddn` command-line front end.
//!
//! Settings resolve as flags > `--config` file > defaults. Every command
//! writes `manifest.txt` into its output directory before doing any work; the
//! manifest is itself a valid `--config` file. Exit status is 0 on success, 1
//! on a runtime failure and 2 on a usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use tddn::checkpoint;
use tddn::cmapss::{load_subset_files, save_subset, SubsetFiles, SubsetId};
use tddn::export::export_features;
use tddn::kv::KeyValues;
use tddn::metrics::{evaluate_test, EvalOptions, MetricsReport};
use tddn::model::{conv_channels_for_depth, TddnConfig, DEFAULT_CONV_CHANNELS, DEFAULT_WINDOW};
use tddn::preprocess::{select_columns_with, DEFAULT_R_MAX};
use tddn::synthetic::{generate, SyntheticSpec};
use tddn::training::{train, TrainConfig, TrainedModel};
use tddn::DatasetBundle;

#[derive(Parser)]
#[command(name = "tddn", version, about = "Remaining-useful-life prediction on C-MAPSS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus training log.
    Train(CommonArgs),
    /// Score a checkpoint on the test split.
    Evaluate(CommonArgs),
    /// Train and evaluate across window sizes or conv depths.
    Sweep(SweepArgs),
    /// Write per-window temporal features, abstract features and attention
    /// weights for one engine.
    ExportFeatures(ExportArgs),
    /// Write a synthetic fleet in the C-MAPSS file layout.
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// FD001..FD004
    #[arg(long)]
    subset: Option<String>,
    /// Directory holding train_FDxxx.txt, test_FDxxx.txt and RUL_FDxxx.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    /// Number of conv/pool stages (channels 32, 64, 128, ...).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    rmax: Option<f64>,
    #[arg(long)]
    include_sensor_14: bool,
    /// Score against the raw test RUL instead of capping it at R_max.
    #[arg(long)]
    no_cap_true_rul: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training file, when it does not follow the train_FDxxx.txt naming.
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long)]
    rul_file: Option<PathBuf>,
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq, Debug)]
enum Dim {
    Window,
    Depth,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq, Debug)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    dim: Option<Dim>,
    /// Comma-separated values, e.g. 16,32,48,64,80.
    #[arg(long)]
    values: Option<String>,
    /// Independent seeds per value (seed, seed+1, ...).
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    engine: Option<u32>,
    #[arg(long, value_enum)]
    split: Option<Split>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Engines per split; defaults to the official counts for the subset.
    #[arg(long)]
    engines: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<tddn::Error> for Failure {
    fn from(e: tddn::Error) -> Self {
        match e {
            tddn::Error::MissingFile(_) | tddn::Error::InvalidArgument(_) | tddn::Error::UnknownSubset(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Fully resolved run settings. Key names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
struct Settings {
    subset: Option<SubsetId>,
    data: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    window: usize,
    depth: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    patience: usize,
    rmax: f64,
    include_sensor_14: bool,
    cap_true_rul: bool,
    checkpoint: Option<PathBuf>,
    train_file: Option<PathBuf>,
    test_file: Option<PathBuf>,
    rul_file: Option<PathBuf>,
    dim: Option<Dim>,
    values: Option<String>,
    repeats: usize,
    engine: Option<u32>,
    split: Split,
    engines: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            subset: None,
            data: None,
            out: PathBuf::from("."),
            seed: t.seed,
            window: DEFAULT_WINDOW,
            depth: DEFAULT_CONV_CHANNELS.len(),
            epochs: t.max_epochs,
            batch: t.batch_size,
            lr: t.lr,
            patience: t.patience,
            rmax: DEFAULT_R_MAX,
            include_sensor_14: false,
            cap_true_rul: true,
            checkpoint: None,
            train_file: None,
            test_file: None,
            rul_file: None,
            dim: None,
            values: None,
            repeats: 5,
            engine: None,
            split: Split::Test,
            engines: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| Failure::Usage(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => usage(format!("bad value `{v}` for `{key}` (expected true/false)")),
    }
}

fn parse_enum<T: ValueEnum>(key: &str, v: &str) -> CliResult<T> {
    T::from_str(v, true).map_err(|_| Failure::Usage(format!("bad value `{v}` for `{key}`")))
}

fn enum_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

impl Settings {
    fn apply_config(&mut self, kv: &KeyValues) -> CliResult<()> {
        for (k, v) in kv.iter() {
            match k {
                "subset" => self.subset = Some(parse_value(k, v)?),
                "data" => self.data = Some(PathBuf::from(v)),
                "out" => self.out = PathBuf::from(v),
                "seed" => self.seed = parse_value(k, v)?,
                "window" => self.window = parse_value(k, v)?,
                "depth" => self.depth = parse_value(k, v)?,
                "epochs" => self.epochs = parse_value(k, v)?,
                "batch" => self.batch = parse_value(k, v)?,
                "lr" => self.lr = parse_value(k, v)?,
                "patience" => self.patience = parse_value(k, v)?,
                "rmax" => self.rmax = parse_value(k, v)?,
                "include_sensor_14" => self.include_sensor_14 = parse_bool(k, v)?,
                "cap_true_rul" => self.cap_true_rul = parse_bool(k, v)?,
                "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
                "train_file" => self.train_file = Some(PathBuf::from(v)),
                "test_file" => self.test_file = Some(PathBuf::from(v)),
                "rul_file" => self.rul_file = Some(PathBuf::from(v)),
                "dim" => self.dim = Some(parse_enum(k, v)?),
                "values" => self.values = Some(v.to_string()),
                "repeats" => self.repeats = parse_value(k, v)?,
                "engine" => self.engine = Some(parse_value(k, v)?),
                "split" => self.split = parse_enum(k, v)?,
                "engines" => self.engines = Some(parse_value(k, v)?),
                // informational manifest entries
                "command" | "version" => {}
                _ => return usage(format!("unknown config key `{k}`")),
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &CommonArgs) -> CliResult<()> {
        if let Some(s) = &a.subset {
            self.subset = Some(s.parse()?);
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { self.$f = v; } )* };
        }
        take!(out, seed, window, depth, epochs, batch, lr, patience, rmax);
        if a.data.is_some() {
            self.data = a.data.clone();
        }
        for (flag, slot) in [
            (&a.checkpoint, &mut self.checkpoint),
            (&a.train_file, &mut self.train_file),
            (&a.test_file, &mut self.test_file),
            (&a.rul_file, &mut self.rul_file),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if a.include_sensor_14 {
            self.include_sensor_14 = true;
        }
        if a.no_cap_true_rul {
            self.cap_true_rul = false;
        }
        Ok(())
    }

    fn resolve(args: &CommonArgs) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            s.apply_config(&KeyValues::parse(&text)?)?;
        }
        s.apply_flags(args)?;
        Ok(s)
    }

    fn to_kv(&self, command: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("command", command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = self.subset {
            kv.set("subset", s);
        }
        if let Some(d) = &self.data {
            kv.set("data", d.display());
        }
        kv.set("out", self.out.display());
        kv.set("seed", self.seed);
        kv.set("window", self.window);
        kv.set("depth", self.depth);
        kv.set("epochs", self.epochs);
        kv.set("batch", self.batch);
        kv.set("lr", format!("{:?}", self.lr));
        kv.set("patience", self.patience);
        kv.set("rmax", format!("{:?}", self.rmax));
        kv.set("include_sensor_14", self.include_sensor_14);
        kv.set("cap_true_rul", self.cap_true_rul);
        for (key, path) in [
            ("checkpoint", &self.checkpoint),
            ("train_file", &self.train_file),
            ("test_file", &self.test_file),
            ("rul_file", &self.rul_file),
        ] {
            if let Some(p) = path {
                kv.set(key, p.display());
            }
        }
        if let Some(d) = &self.dim {
            kv.set("dim", enum_name(d));
        }
        if let Some(v) = &self.values {
            kv.set("values", v);
        }
        kv.set("repeats", self.repeats);
        if let Some(e) = self.engine {
            kv.set("engine", e);
        }
        kv.set("split", enum_name(&self.split));
        if let Some(n) = self.engines {
            kv.set("engines", n);
        }
        kv
    }

    fn subset(&self) -> SubsetId {
        self.subset.unwrap_or(SubsetId::Fd001)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            max_epochs: self.epochs,
            lr: self.lr,
            patience: self.patience,
            seed,
            r_max: self.rmax,
            ..TrainConfig::default()
        }
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            cap_true_rul: self.cap_true_rul,
        }
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.tddn"))
    }
}

fn write_manifest(s: &Settings, command: &str) -> CliResult<()> {
    std::fs::create_dir_all(&s.out).map_err(|e| io_fail(&s.out, e))?;
    let path = s.out.join("manifest.txt");
    std::fs::write(&path, s.to_kv(command).to_string()).map_err(|e| io_fail(&path, e))
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = File::create(path).map(BufWriter::new).map_err(|e| io_fail(path, e))?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| io_fail(path, e))
}

/// Conventional file names under `--data`, with any per-file overrides.
fn load_data(s: &Settings, subset: SubsetId) -> CliResult<DatasetBundle> {
    let all_overridden = s.train_file.is_some() && s.test_file.is_some() && s.rul_file.is_some();
    let mut files = match &s.data {
        Some(dir) if !dir.is_dir() => {
            return usage(format!("data directory {} does not exist", dir.display()))
        }
        Some(dir) => SubsetFiles::conventional(dir, subset),
        None if all_overridden => SubsetFiles::conventional(Path::new(""), subset),
        None => return usage("no data directory given (use --data)"),
    };
    for (over, slot) in [
        (&s.train_file, &mut files.train),
        (&s.test_file, &mut files.test),
        (&s.rul_file, &mut files.rul),
    ] {
        if let Some(p) = over {
            *slot = p.clone();
        }
    }
    Ok(load_subset_files(subset, &files)?)
}

fn model_config(m: usize, window: usize, depth: usize, seed: u64) -> CliResult<TddnConfig> {
    if depth < 1 {
        return usage("depth must be >= 1");
    }
    let cfg = TddnConfig::new(window, m, seed).with_conv_channels(conv_channels_for_depth(depth));
    cfg.validate()?;
    Ok(cfg)
}

fn fit(s: &Settings, bundle: &DatasetBundle, window: usize, depth: usize, seed: u64) -> CliResult<(TrainedModel, tddn::TrainReport)> {
    let selection = select_columns_with(bundle.subset, s.include_sensor_14);
    let cfg = model_config(selection.m(), window, depth, seed)?;
    let tc = s.train_config(seed);
    tc.validate()?;
    Ok(train(bundle, selection, cfg, &tc)?)
}

fn cmd_train(s: &Settings) -> CliResult<()> {
    let bundle = load_data(s, s.subset())?;
    let (tm, report) = fit(s, &bundle, s.window, s.depth, s.seed)?;
    let ckpt = s.checkpoint_path();
    checkpoint::save(&ckpt, &tm)?;
    write_with(&s.out.join("train_log.csv"), |o| report.write_log_csv(o))?;
    write_with(&s.out.join("train_summary.txt"), |o| report.write_summary(o))?;
    println!(
        "best_epoch={} best_val_rmse={:.4} stop={}",
        report.best_epoch, report.best_val_rmse, report.stop_reason
    );
    Ok(())
}

fn write_metrics(dir: &Path, report: &MetricsReport) -> CliResult<()> {
    write_with(&dir.join("predictions.csv"), |o| report.write_csv(o))?;
    write_with(&dir.join("metrics.txt"), |o| {
        writeln!(o, "engines={}", report.count())?;
        writeln!(o, "rmse={:?}", report.rmse)?;
        writeln!(o, "score={:?}", report.score)
    })
}

fn load_checkpoint(s: &Settings) -> CliResult<TrainedModel> {
    let path = s.checkpoint_path();
    if !path.is_file() {
        return usage(format!("checkpoint {} does not exist", path.display()));
    }
    let tm = checkpoint::load(&path)?;
    let ck_subset = tm.preprocessor.selection.subset;
    if let Some(sub) = s.subset {
        if sub != ck_subset {
            return usage(format!("checkpoint was trained on {ck_subset}, but subset {sub} was requested"));
        }
    }
    Ok(tm)
}

fn cmd_evaluate(s: &Settings) -> CliResult<()> {
    let tm = load_checkpoint(s)?;
    let bundle = load_data(s, tm.preprocessor.selection.subset)?;
    let report = evaluate_test(&tm.model, &bundle, &tm.preprocessor, s.eval_options())?;
    write_metrics(&s.out, &report)?;
    println!("rmse={:.4} score={:.4}", report.rmse, report.score);
    Ok(())
}

fn cmd_sweep(s: &Settings) -> CliResult<()> {
    let Some(dim) = s.dim else {
        return usage("sweep needs --dim window|depth");
    };
    let Some(raw) = &s.values else {
        return usage("sweep needs --values");
    };
    let values: Vec<usize> = raw
        .split(',')
        .map(|v| parse_value("values", v.trim()))
        .collect::<CliResult<_>>()?;
    if values.is_empty() || s.repeats < 1 {
        return usage("sweep needs at least one value and one repeat");
    }
    if dim == Dim::Depth && values.contains(&0) {
        return usage("depth values must be >= 1");
    }
    let bundle = load_data(s, s.subset())?;
    // validate every point before any training starts
    let m = select_columns_with(bundle.subset, s.include_sensor_14).m();
    let point = |v: usize| match dim {
        Dim::Window => (v, s.depth),
        Dim::Depth => (s.window, v),
    };
    for &v in &values {
        let (w, d) = point(v);
        model_config(m, w, d, s.seed)?;
    }

    let path = s.out.join("sweep.csv");
    let mut rows = Vec::new();
    for &v in &values {
        let (w, d) = point(v);
        let mut rmses = Vec::new();
        let mut scores = Vec::new();
        let mut times = Vec::new();
        for r in 0..s.repeats {
            let seed = s.seed + r as u64;
            let start = Instant::now();
            let (tm, _) = fit(s, &bundle, w, d, seed)?;
            let rep = evaluate_test(&tm.model, &bundle, &tm.preprocessor, s.eval_options())?;
            times.push(start.elapsed().as_secs_f64());
            info!("{dim:?}={v} seed={seed}: rmse {:.4} score {:.4}", rep.rmse, rep.score);
            rmses.push(rep.rmse);
            scores.push(rep.score);
        }
        rows.push((v, rmses, scores, times));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    write_with(&path, |o| {
        write!(o, "{}", enum_name(&dim))?;
        for r in 0..s.repeats {
            write!(o, ",rmse_seed{}", s.seed + r as u64)?;
        }
        for r in 0..s.repeats {
            write!(o, ",score_seed{}", s.seed + r as u64)?;
        }
        writeln!(o, ",mean_rmse,mean_score,mean_time_s")?;
        for (v, rmses, scores, times) in &rows {
            write!(o, "{v}")?;
            for x in rmses.iter().chain(scores) {
                write!(o, ",{x:?}")?;
            }
            writeln!(o, ",{:?},{:?},{:?}", mean(rmses), mean(scores), mean(times))?;
        }
        Ok(())
    })?;
    for (v, rmses, scores, times) in &rows {
        println!(
            "{}={v} mean_rmse={:.4} mean_score={:.4} mean_time_s={:.1}",
            enum_name(&dim),
            mean(rmses),
            mean(scores),
            mean(times)
        );
    }
    Ok(())
}

fn cmd_export(s: &Settings) -> CliResult<()> {
    let Some(engine) = s.engine else {
        return usage("export-features needs --engine");
    };
    let tm = load_checkpoint(s)?;
    let bundle = load_data(s, tm.preprocessor.selection.subset)?;
    let traj = match s.split {
        Split::Train => bundle.train_engine(engine),
        Split::Test => bundle.test_engine(engine),
    };
    let Some(traj) = traj else {
        return usage(format!(
            "engine {engine} not found in the {} split",
            enum_name(&s.split)
        ));
    };
    let files = export_features(&tm, traj, &s.out)?;
    println!("exported {} windows to {}", files.windows, s.out.display());
    Ok(())
}

fn cmd_synth(s: &Settings) -> CliResult<()> {
    let subset = s.subset();
    let mut spec = SyntheticSpec::like_official(subset, s.seed);
    if let Some(n) = s.engines {
        spec.train_engines = n;
        spec.test_engines = n;
    }
    let bundle = generate(&spec)?;
    let files = save_subset(&s.out, &bundle)?;
    println!(
        "wrote {}, {}, {}",
        files.train.display(),
        files.test.display(),
        files.rul.display()
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    type Overrides<'a> = Box<dyn Fn(&mut Settings) + 'a>;
    let (name, common, extra): (&str, &CommonArgs, Overrides) = match &cli.command {
        Command::Train(a) => ("train", a, Box::new(|_| {})),
        Command::Evaluate(a) => ("evaluate", a, Box::new(|_| {})),
        Command::Sweep(a) => (
            "sweep",
            &a.common,
            Box::new(|s: &mut Settings| {
                if a.dim.is_some() {
                    s.dim = a.dim;
                }
                if a.values.is_some() {
                    s.values = a.values.clone();
                }
                if let Some(r) = a.repeats {
                    s.repeats = r;
                }
            }),
        ),
        Command::ExportFeatures(a) => (
            "export-features",
            &a.common,
            Box::new(|s: &mut Settings| {
                if a.engine.is_some() {
                    s.engine = a.engine;
                }
                if let Some(sp) = a.split {
                    s.split = sp;
                }
            }),
        ),
        Command::Synth(a) => (
            "synth",
            &a.common,
            Box::new(|s: &mut Settings| {
                if a.engines.is_some() {
                    s.engines = a.engines;
                }
            }),
        ),
    };
    let mut settings = Settings::resolve(common)?;
    extra(&mut settings);
    if name != "evaluate" && name != "export-features" && settings.subset.is_none() {
        settings.subset = Some(SubsetId::Fd001);
    }
    write_manifest(&settings, name)?;
    match &cli.command {
        Command::Train(_) => cmd_train(&settings),
        Command::Evaluate(_) => cmd_evaluate(&settings),
        Command::Sweep(_) => cmd_sweep(&settings),
        Command::ExportFeatures(_) => cmd_export(&settings),
        Command::Synth(_) => cmd_synth(&settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            e.exit();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
