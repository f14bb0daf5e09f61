//! Result rows, their CSV encoding and the summaries derived from them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{RunResult, Scenario};

/// First line of every results file.
pub const SCHEMA_HEADER: &str = "# dtas-results v1";

pub const COLUMNS: [&str; 8] = [
    "scenario",
    "label",
    "run",
    "episode",
    "utility",
    "optimal_utility",
    "failed_fraction",
    "seed",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing or unsupported schema line, expected `{SCHEMA_HEADER}`, found `{0}`")]
    Schema(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("expected columns {expected:?}, found {found:?}")]
    Columns {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },
    #[error("no rows")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: Scenario,
    pub label: String,
    pub run: usize,
    pub episode: usize,
    pub utility: f64,
    pub optimal_utility: f64,
    pub failed_fraction: f64,
    pub seed: u64,
}

impl ResultRow {
    fn check(&self, row: usize) -> Result<(), ReportError> {
        for (name, v) in [
            ("utility", self.utility),
            ("optimal_utility", self.optimal_utility),
            ("failed_fraction", self.failed_fraction),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ReportError::InvalidRow {
                    row,
                    msg: format!("{name} = {v} is not a finite non-negative number"),
                });
            }
        }
        Ok(())
    }
}

pub fn rows_from_runs(scenario: Scenario, seed: u64, runs: &[RunResult]) -> Vec<ResultRow> {
    runs.iter()
        .flat_map(|r| {
            r.episodes.iter().map(move |e| ResultRow {
                scenario,
                label: r.label.clone(),
                run: r.run,
                episode: e.episode,
                utility: e.utility,
                optimal_utility: e.optimal_utility,
                failed_fraction: e.failed_fraction,
                seed,
            })
        })
        .collect()
}

pub fn write_rows<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<(), ReportError> {
    writeln!(out, "{SCHEMA_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for (i, row) in rows.iter().enumerate() {
        row.check(i + 1)?;
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>, ReportError> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let first = first.trim_end();
    if first != SCHEMA_HEADER {
        return Err(ReportError::Schema(first.to_string()));
    }
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if let Some(c) = found.iter().find(|c| !COLUMNS.contains(&c.as_str())) {
        return Err(ReportError::UnknownColumn(c.clone()));
    }
    if found != COLUMNS {
        return Err(ReportError::Columns {
            expected: COLUMNS.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: ResultRow = rec?;
        row.check(i + 1)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_rows_file(path: &Path, rows: &[ResultRow]) -> Result<(), ReportError> {
    write_rows(io::BufWriter::new(fs::File::create(path)?), rows)
}

pub fn read_rows_file(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    read_rows(fs::File::open(path)?)
}

/// Percentile with linear interpolation between order statistics; `q` in [0, 1].
/// `sorted` must be ascending and non-empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count: v.len(),
            mean,
            std,
            min: v[0],
            p25: percentile(&v, 0.25),
            p50: percentile(&v, 0.5),
            p75: percentile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Reference label each scenario's comparisons are made against.
pub fn baseline_label(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::Stable => "OPT",
        Scenario::Exploration => "ATARIA0",
        Scenario::Volatile => "ATARIA-NODROP",
        Scenario::Large => "ATARIA-10",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    /// Final-episode utility across runs.
    pub utility: SummaryStats,
    /// Mean final-episode utility over mean theoretical optimum.
    pub optimality: f64,
    /// Mean failed-allocation fraction in the final episode.
    pub failed_fraction: f64,
    /// Percentage change of mean final utility against the baseline label.
    pub change_vs_baseline: Option<f64>,
    /// Percentage change of optimality against the baseline label.
    pub optimality_change_vs_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub baseline: String,
    pub final_episode: usize,
    pub labels: BTreeMap<String, LabelSummary>,
}

fn final_rows(rows: &[ResultRow]) -> (usize, BTreeMap<&str, Vec<&ResultRow>>) {
    let last = rows.iter().map(|r| r.episode).max().unwrap_or(0);
    let mut by: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.episode == last) {
        by.entry(r.label.as_str()).or_default().push(r);
    }
    (last, by)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Statistics over final-episode values per label.
pub fn summarize(rows: &[ResultRow]) -> Result<Summary, ReportError> {
    let scenario = rows.first().ok_or(ReportError::Empty)?.scenario;
    let (last, by) = final_rows(rows);
    let base = baseline_label(scenario);
    let stat = |rs: &[&ResultRow]| -> (SummaryStats, f64) {
        let u: Vec<f64> = rs.iter().map(|r| r.utility).collect();
        let s = SummaryStats::of(&u).unwrap();
        let opt = mean(rs.iter().map(|r| r.optimal_utility));
        (s, if opt > 0.0 { s.mean / opt } else { 0.0 })
    };
    let reference = by.get(base).map(|rs| stat(rs));
    let pct = |x: f64, b: f64| (b != 0.0).then(|| 100.0 * (x - b) / b);
    let labels = by
        .iter()
        .map(|(l, rs)| {
            let (s, opt) = stat(rs);
            (
                l.to_string(),
                LabelSummary {
                    utility: s,
                    optimality: opt,
                    failed_fraction: mean(rs.iter().map(|r| r.failed_fraction)),
                    change_vs_baseline: reference.and_then(|(b, _)| pct(s.mean, b.mean)),
                    optimality_change_vs_baseline: reference.and_then(|(_, bo)| pct(opt, bo)),
                },
            )
        })
        .collect();
    Ok(Summary {
        scenario,
        baseline: base.to_string(),
        final_episode: last,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub episode: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per-episode mean utility with the central 75% band across runs.
pub fn series(rows: &[ResultRow]) -> BTreeMap<String, Vec<SeriesPoint>> {
    let mut by: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.label)
            .or_default()
            .entry(r.episode)
            .or_default()
            .push(r.utility);
    }
    by.into_iter()
        .map(|(l, eps)| {
            let pts = eps
                .into_iter()
                .map(|(episode, mut v)| {
                    v.sort_by(f64::total_cmp);
                    SeriesPoint {
                        episode,
                        mean: mean(v.iter().copied()),
                        lo: percentile(&v, 0.125),
                        hi: percentile(&v, 0.875),
                    }
                })
                .collect();
            (l.to_string(), pts)
        })
        .collect()
}

/// Writes `series/<label>.csv` under `dir` for every label.
pub fn emit_plot_data(rows: &[ResultRow], dir: &Path) -> Result<(), ReportError> {
    let dir = dir.join("series");
    fs::create_dir_all(&dir)?;
    for (label, pts) in series(rows) {
        let mut w = csv::Writer::from_path(dir.join(format!("{label}.csv")))?;
        for p in pts {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), ReportError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, summary)?;
    writeln!(f)?;
    Ok(())
}
