//! C-MAPSS text-file ingestion.
//!
//! Data files carry 26 whitespace-separated columns per line: unit number,
//! cycle, three operational settings and 21 sensor channels. RUL files carry
//! one nonnegative integer per test engine.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_SETTINGS: usize = 3;
pub const NUM_SENSORS: usize = 21;
pub const NUM_FIELDS: usize = 2 + NUM_SETTINGS + NUM_SENSORS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubsetId {
    Fd001,
    Fd002,
    Fd003,
    Fd004,
}

impl SubsetId {
    pub const ALL: [SubsetId; 4] = [
        SubsetId::Fd001,
        SubsetId::Fd002,
        SubsetId::Fd003,
        SubsetId::Fd004,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubsetId::Fd001 => "FD001",
            SubsetId::Fd002 => "FD002",
            SubsetId::Fd003 => "FD003",
            SubsetId::Fd004 => "FD004",
        }
    }

    /// Single operating condition subsets, where the trend-based column
    /// selection applies.
    pub fn single_condition(self) -> bool {
        matches!(self, SubsetId::Fd001 | SubsetId::Fd003)
    }

    /// Published statistics of the official NASA release.
    pub fn official_stats(self) -> OfficialStats {
        match self {
            SubsetId::Fd001 => OfficialStats::new(100, 100, 128, 31),
            SubsetId::Fd002 => OfficialStats::new(260, 259, 128, 21),
            SubsetId::Fd003 => OfficialStats::new(100, 100, 145, 38),
            SubsetId::Fd004 => OfficialStats::new(259, 248, 128, 19),
        }
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FD001" | "1" => Ok(SubsetId::Fd001),
            "FD002" | "2" => Ok(SubsetId::Fd002),
            "FD003" | "3" => Ok(SubsetId::Fd003),
            "FD004" | "4" => Ok(SubsetId::Fd004),
            _ => Err(Error::UnknownSubset(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfficialStats {
    pub train_engines: usize,
    pub test_engines: usize,
    pub min_train_cycles: usize,
    pub min_test_cycles: usize,
}

impl OfficialStats {
    const fn new(
        train_engines: usize,
        test_engines: usize,
        min_train_cycles: usize,
        min_test_cycles: usize,
    ) -> Self {
        Self {
            train_engines,
            test_engines,
            min_train_cycles,
            min_test_cycles,
        }
    }
}

/// One parsed line of a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub unit_id: u32,
    pub cycle: u32,
    pub settings: [f64; NUM_SETTINGS],
    pub sensors: [f64; NUM_SENSORS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub settings: [f64; NUM_SETTINGS],
    pub sensors: [f64; NUM_SENSORS],
}

/// All cycles of one engine, ordered by cycle number starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineTrajectory {
    pub unit_id: u32,
    pub rows: Vec<CycleRow>,
}

impl EngineTrajectory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub subset: SubsetId,
    pub train: Vec<EngineTrajectory>,
    pub test: Vec<EngineTrajectory>,
    /// RUL at the last observed cycle of each test engine, in test order.
    pub test_rul: Vec<u32>,
}

impl DatasetBundle {
    pub fn new(
        subset: SubsetId,
        train: Vec<EngineTrajectory>,
        test: Vec<EngineTrajectory>,
        test_rul: Vec<u32>,
    ) -> Result<Self> {
        if test.len() != test_rul.len() {
            return Err(Error::Structural(format!(
                "{} test engines but {} RUL values",
                test.len(),
                test_rul.len()
            )));
        }
        Ok(Self {
            subset,
            train,
            test,
            test_rul,
        })
    }

    pub fn train_engine(&self, unit_id: u32) -> Option<&EngineTrajectory> {
        self.train.iter().find(|t| t.unit_id == unit_id)
    }

    pub fn test_engine(&self, unit_id: u32) -> Option<&EngineTrajectory> {
        self.test.iter().find(|t| t.unit_id == unit_id)
    }

    /// Compares engine counts and minimum lengths against the published
    /// table for this subset.
    pub fn check_official(&self) -> Result<()> {
        let expected = self.subset.official_stats();
        let min_len = |ts: &[EngineTrajectory]| ts.iter().map(|t| t.len()).min().unwrap_or(0);
        let got = OfficialStats::new(
            self.train.len(),
            self.test.len(),
            min_len(&self.train),
            min_len(&self.test),
        );
        if got != expected {
            return Err(Error::Structural(format!(
                "{} does not match the official table: expected {:?}, found {:?}",
                self.subset, expected, got
            )));
        }
        Ok(())
    }
}

fn parse_index(token: &str, line: usize, what: &str) -> Result<u32> {
    let value = match token.parse::<u32>() {
        Ok(v) => v,
        Err(_) => {
            // some exports write integral columns as "1.0"
            let f: f64 = token
                .parse()
                .map_err(|_| Error::parse(line, format!("{what} `{token}` is not numeric")))?;
            if f.fract() != 0.0 || f < 0.0 || f > u32::MAX as f64 {
                return Err(Error::parse(
                    line,
                    format!("{what} `{token}` is not a positive integer"),
                ));
            }
            f as u32
        }
    };
    if value < 1 {
        return Err(Error::parse(line, format!("{what} must be >= 1")));
    }
    Ok(value)
}

fn parse_line(text: &str, line: usize) -> Result<RawRecord> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != NUM_FIELDS {
        return Err(Error::parse(
            line,
            format!("expected {NUM_FIELDS} columns, found {}", tokens.len()),
        ));
    }
    let unit_id = parse_index(tokens[0], line, "unit number")?;
    let cycle = parse_index(tokens[1], line, "cycle")?;
    let mut values = [0.0; NUM_SETTINGS + NUM_SENSORS];
    for (slot, tok) in values.iter_mut().zip(&tokens[2..]) {
        *slot = tok
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("`{tok}` is not numeric")))?;
    }
    let mut settings = [0.0; NUM_SETTINGS];
    let mut sensors = [0.0; NUM_SENSORS];
    settings.copy_from_slice(&values[..NUM_SETTINGS]);
    sensors.copy_from_slice(&values[NUM_SETTINGS..]);
    Ok(RawRecord {
        unit_id,
        cycle,
        settings,
        sensors,
    })
}

/// Parses a C-MAPSS data file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_data_file<R: BufRead>(reader: R) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(&line, idx + 1)?);
    }
    Ok(records)
}

pub fn parse_data_str(text: &str) -> Result<Vec<RawRecord>> {
    parse_data_file(text.as_bytes())
}

/// Groups records into per-engine trajectories ordered by unit number.
/// Cycles of every unit must run 1..n without gaps or duplicates.
pub fn group_by_engine(mut records: Vec<RawRecord>) -> Result<Vec<EngineTrajectory>> {
    records.sort_by_key(|r| (r.unit_id, r.cycle));
    let mut out: Vec<EngineTrajectory> = Vec::new();
    for rec in records {
        let start_new = !matches!(out.last(), Some(t) if t.unit_id == rec.unit_id);
        if start_new {
            if rec.cycle != 1 {
                return Err(Error::Structural(format!(
                    "unit {}: gap at cycle 1 (first cycle is {})",
                    rec.unit_id, rec.cycle
                )));
            }
            out.push(EngineTrajectory {
                unit_id: rec.unit_id,
                rows: Vec::new(),
            });
        }
        let traj = out.last_mut().expect("trajectory pushed above");
        let expected = traj.rows.len() as u32 + 1;
        if rec.cycle < expected {
            return Err(Error::Structural(format!(
                "unit {}: duplicate cycle {}",
                rec.unit_id, rec.cycle
            )));
        }
        if rec.cycle > expected {
            return Err(Error::Structural(format!(
                "unit {}: gap at cycle {}",
                rec.unit_id, expected
            )));
        }
        traj.rows.push(CycleRow {
            settings: rec.settings,
            sensors: rec.sensors,
        });
    }
    Ok(out)
}

pub fn parse_rul_file<R: BufRead>(reader: R) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let value: i64 = tok
            .parse()
            .map_err(|_| Error::parse(idx + 1, format!("`{tok}` is not an integer")))?;
        if value < 0 || value > u32::MAX as i64 {
            return Err(Error::parse(idx + 1, format!("RUL {value} out of range")));
        }
        out.push(value as u32);
    }
    Ok(out)
}

pub fn parse_rul_str(text: &str) -> Result<Vec<u32>> {
    parse_rul_file(text.as_bytes())
}

/// Paths of the three files that make up one subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub rul: PathBuf,
}

impl SubsetFiles {
    /// Conventional NASA file names inside `dir`.
    pub fn conventional(dir: &Path, subset: SubsetId) -> Self {
        Self {
            train: dir.join(format!("train_{subset}.txt")),
            test: dir.join(format!("test_{subset}.txt")),
            rul: dir.join(format!("RUL_{subset}.txt")),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn with_file_context<T>(path: &Path, res: Result<T>) -> Result<T> {
    res.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn load_subset(dir: &Path, subset: SubsetId) -> Result<DatasetBundle> {
    load_subset_files(subset, &SubsetFiles::conventional(dir, subset))
}

pub fn load_subset_files(subset: SubsetId, files: &SubsetFiles) -> Result<DatasetBundle> {
    // open all three first so a missing file is reported before parsing
    let train_r = open(&files.train)?;
    let test_r = open(&files.test)?;
    let rul_r = open(&files.rul)?;
    let train = group_by_engine(with_file_context(&files.train, parse_data_file(train_r))?)?;
    let test = group_by_engine(with_file_context(&files.test, parse_data_file(test_r))?)?;
    let test_rul = with_file_context(&files.rul, parse_rul_file(rul_r))?;
    DatasetBundle::new(subset, train, test, test_rul)
}

/// Writes trajectories back in the 26-column layout. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_data_file<W: Write>(mut out: W, trajectories: &[EngineTrajectory]) -> std::io::Result<()> {
    for traj in trajectories {
        for (i, row) in traj.rows.iter().enumerate() {
            write!(out, "{} {}", traj.unit_id, i + 1)?;
            for v in row.settings.iter().chain(row.sensors.iter()) {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_rul_file<W: Write>(mut out: W, rul: &[u32]) -> std::io::Result<()> {
    for r in rul {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// Writes a bundle as the three conventional files inside `dir`.
pub fn save_subset(dir: &Path, bundle: &DatasetBundle) -> Result<SubsetFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SubsetFiles::conventional(dir, bundle.subset);
    let create = |p: &Path| {
        File::create(p)
            .map(std::io::BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    write_data_file(create(&files.train)?, &bundle.train).map_err(|e| Error::io(&files.train, e))?;
    write_data_file(create(&files.test)?, &bundle.test).map_err(|e| Error::io(&files.test, e))?;
    write_rul_file(create(&files.rul)?, &bundle.test_rul).map_err(|e| Error::io(&files.rul, e))?;
    Ok(files)
}
