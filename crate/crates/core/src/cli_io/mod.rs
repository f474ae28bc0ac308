//! Configuration ingestion, experiment orchestration, deterministic oracles
//! and result emission.
//!
//! Every experiment produces an [`ExperimentReport`]: a table of
//! [`ResultRow`]s (written as `results.csv`), a plain-text summary and,
//! for `ns-solve`, grid dumps of the final iterate.

mod config;
mod experiments;
mod oracle;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    load_config, parse_config, BudgetConfig, CheckConfig, DensitySpec, Experiment, ProblemConfig, QuadratureConfig,
    RunConfig, SolverConfig,
};
pub use experiments::{emit_convergence_study, run_experiment, ConvergencePoint, ConvergenceStudy};
pub use oracle::{gauss_legendre, oracle_reference, HeatDatum, OracleSpec, OracleValue, PeriodicProblem1d};

use crate::fields::io::{write_binary, write_csv};
use crate::fields::GridField;
use crate::{Error, Result};

/// One line of `results.csv`.
///
/// Rows with an oracle pass when `|value - oracle_value| ≤ tolerance`.
/// Rows without one either carry an upper bound in `tolerance` (pass when
/// `value ≤ tolerance`) or are informational (no tolerance, always pass).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub quantity: String,
    pub value: f64,
    pub std_error: f64,
    pub oracle_value: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl ResultRow {
    pub fn compare(e: Experiment, quantity: impl Into<String>, value: f64, std_error: f64, oracle: f64, tolerance: f64) -> Self {
        Self {
            experiment: e.name().to_string(),
            quantity: quantity.into(),
            value,
            std_error,
            oracle_value: Some(oracle),
            tolerance: Some(tolerance),
            pass: (value - oracle).abs() <= tolerance,
        }
    }

    pub fn bounded(e: Experiment, quantity: impl Into<String>, value: f64, std_error: f64, bound: f64) -> Self {
        Self {
            experiment: e.name().to_string(),
            quantity: quantity.into(),
            value,
            std_error,
            oracle_value: None,
            tolerance: Some(bound),
            pass: value <= bound,
        }
    }

    pub fn info(e: Experiment, quantity: impl Into<String>, value: f64, std_error: f64) -> Self {
        Self {
            experiment: e.name().to_string(),
            quantity: quantity.into(),
            value,
            std_error,
            oracle_value: None,
            tolerance: None,
            pass: true,
        }
    }

    /// A yes/no check, reported as value 1 or 0.
    pub fn flag(e: Experiment, quantity: impl Into<String>, holds: bool) -> Self {
        Self {
            experiment: e.name().to_string(),
            quantity: quantity.into(),
            value: if holds { 1.0 } else { 0.0 },
            std_error: 0.0,
            oracle_value: Some(1.0),
            tolerance: Some(0.0),
            pass: holds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<String>,
    /// Grid dumps, written as `fields/<name>.csv` and `fields/<name>.bin`.
    pub fields: Vec<(String, GridField)>,
    /// Extra CSV tables, written as `<name>.csv`.
    pub tables: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment, rows: Vec::new(), summary: Vec::new(), fields: Vec::new(), tables: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn row(&self, quantity: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub(crate) fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("experiment: {}\n", self.experiment);
        for line in &self.summary {
            s.push_str(line);
            s.push('\n');
        }
        s.push('\n');
        for r in &self.rows {
            let oracle = r.oracle_value.map_or(String::from("-"), |o| format!("{o:.6e}"));
            let tol = r.tolerance.map_or(String::from("-"), |t| format!("{t:.3e}"));
            s.push_str(&format!(
                "{:<4} {:<40} {:>14.6e} ± {:<10.3e} oracle {:<14} tol {}\n",
                if r.pass { "ok" } else { "FAIL" },
                r.quantity,
                r.value,
                r.std_error,
                oracle,
                tol
            ));
        }
        s.push_str(&format!("\nresult: {}\n", if self.passed() { "pass" } else { "FAIL" }));
        s
    }
}

/// Command-line overrides applied on top of a configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Pass = 0,
    CheckFailure = 1,
    ConfigError = 2,
    RuntimeFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Writes `results.csv`, `summary.txt`, extra tables and field dumps into
/// `dir`, returning the paths written.
pub fn write_artifacts(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
    for row in &report.rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("summary.txt");
    fs::write(&path, report.summary_text())?;
    written.push(path);

    for (name, body) in &report.tables {
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, body)?;
        written.push(path);
    }

    if !report.fields.is_empty() {
        let fdir = dir.join("fields");
        fs::create_dir_all(&fdir)?;
        for (name, field) in &report.fields {
            let path = fdir.join(format!("{name}.csv"));
            let mut w = BufWriter::new(fs::File::create(&path)?);
            write_csv(field, &mut w)?;
            w.flush()?;
            written.push(path);
            let path = fdir.join(format!("{name}.bin"));
            let mut w = BufWriter::new(fs::File::create(&path)?);
            write_binary(field, &mut w)?;
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Result of [`run`]: the exit status, and the report when the experiment
/// ran.
#[derive(Debug)]
pub struct Outcome {
    pub status: ExitStatus,
    pub report: Option<ExperimentReport>,
    pub error: Option<Error>,
    pub written: Vec<PathBuf>,
}

/// Loads the configuration (if any), runs `experiment` and writes its
/// artifacts under `out`, the configured `output_dir`, or
/// `vortmc-out/<experiment>`. Nothing is written on a configuration error.
pub fn run(experiment: Experiment, config: Option<&Path>, overrides: Overrides, out: Option<&Path>) -> Outcome {
    let fail = |status, error| Outcome { status, report: None, error: Some(error), written: Vec::new() };
    let cfg = match config.map(load_config).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return fail(ExitStatus::ConfigError, e),
    };
    if let Some(named) = cfg.experiment {
        if named != experiment {
            return fail(
                ExitStatus::ConfigError,
                Error::Config(format!("configuration is for `{named}`, not `{experiment}`")),
            );
        }
    }
    let report = match run_experiment(experiment, &cfg, overrides) {
        Ok(r) => r,
        Err(e @ Error::Config(_)) => return fail(ExitStatus::ConfigError, e),
        Err(e) => return fail(ExitStatus::RuntimeFailure, e),
    };
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("vortmc-out").join(experiment.name()));
    match write_artifacts(&report, &dir) {
        Ok(written) => Outcome {
            status: if report.passed() { ExitStatus::Pass } else { ExitStatus::CheckFailure },
            report: Some(report),
            error: None,
            written,
        },
        Err(e) => Outcome { status: ExitStatus::RuntimeFailure, report: Some(report), error: Some(e), written: Vec::new() },
    }
}
