//! Aggregation of run reports into model × noise-level tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;

use mopinn_core::driver::{RunReport, Variant};
use mopinn_core::problems::{Mode, ProblemKind};

use crate::error::CliError;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Mean and sample standard deviation; the deviation is absent for a
/// single value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub variant: Variant,
    pub eta: f64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub mse: Spread,
    pub mae: Spread,
    pub physics_estimate: Option<Spread>,
    pub physics_l1: Option<Spread>,
}

type Key = (String, String, usize, u64);

fn key(r: &RunReport) -> Key {
    let variant = Variant::ALL.iter().position(|&v| v == r.variant).unwrap_or(usize::MAX);
    // Bit patterns of non-negative floats order like the values.
    (r.problem.to_string(), r.mode.to_string(), variant, r.eta.to_bits())
}

/// One row per `(problem, mode, variant, eta)`.
pub fn aggregate(reports: &[RunReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<Key, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|r| r.seed);
            let col = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Vec<f64> { g.iter().filter_map(|r| f(r)).collect() };
            let first = g[0];
            SummaryRow {
                problem: first.problem,
                mode: first.mode,
                variant: first.variant,
                eta: first.eta,
                runs: g.len(),
                seeds: g.iter().map(|r| r.seed).collect(),
                mse: Spread::of(&col(&|r| Some(r.metrics.mse))).expect("group is non-empty"),
                mae: Spread::of(&col(&|r| Some(r.metrics.mae))).expect("group is non-empty"),
                physics_estimate: Spread::of(&col(&|r| r.metrics.physics_estimate)),
                physics_l1: Spread::of(&col(&|r| r.metrics.physics_l1)),
            }
        })
        .collect()
}

/// Reports found under `dir` and the number of unreadable ones.
pub fn collect_reports(dir: &Path) -> Result<(Vec<(PathBuf, RunReport)>, usize), CliError> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, "not a directory"));
    }
    let mut found = Vec::new();
    let mut skipped = 0;
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| match e {
            Ok(e) => Some(e),
            Err(err) => {
                warn!("skipping unreadable entry: {err}");
                skipped += 1;
                None
            }
        })
        .filter(|e| e.file_type().is_file() && e.file_name() == REPORT_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    for p in paths {
        match fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string())) {
            Ok(r) => found.push((p, r)),
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    Ok((found, skipped))
}

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

fn cells(s: Option<Spread>) -> [String; 2] {
    match s {
        Some(s) => [num(s.mean), s.std.map(num).unwrap_or_default()],
        None => [String::new(), String::new()],
    }
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "problem",
    "mode",
    "variant",
    "eta",
    "runs",
    "mse_mean",
    "mse_std",
    "mae_mean",
    "mae_std",
    "physics_mean",
    "physics_std",
    "physics_l1_mean",
    "physics_l1_std",
    "seeds",
];

pub fn summary_record(r: &SummaryRow) -> Vec<String> {
    let mut row = vec![r.problem.to_string(), r.mode.to_string(), r.variant.to_string(), format!("{:.2}", r.eta), r.runs.to_string()];
    for s in [Some(r.mse), Some(r.mae), r.physics_estimate, r.physics_l1] {
        row.extend(cells(s));
    }
    row.push(r.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    row
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(summary_record(r)).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Human-readable table: mean ± std per cell.
pub fn render(rows: &[SummaryRow]) -> String {
    let pm = |s: Option<Spread>| match s {
        Some(Spread { mean, std: Some(sd) }) => format!("{mean:.4e} ± {sd:.1e}"),
        Some(Spread { mean, std: None }) => format!("{mean:.4e}"),
        None => "-".into(),
    };
    let mut out = format!(
        "{:<8} {:<8} {:<11} {:>5} {:>4}  {:<22} {:<22} {:<22}\n",
        "problem", "mode", "variant", "eta", "runs", "mse", "mae", "physics |err|"
    );
    for r in rows {
        out += &format!(
            "{:<8} {:<8} {:<11} {:>5.2} {:>4}  {:<22} {:<22} {:<22}\n",
            r.problem.to_string(),
            r.mode.to_string(),
            r.variant.to_string(),
            r.eta,
            r.runs,
            pm(Some(r.mse)),
            pm(Some(r.mae)),
            pm(r.physics_l1)
        );
    }
    out
}
