//! Config-driven runner for the fracflux verification experiments.
//!
//! `run` executes the configured experiments and writes `results.csv` (one
//! row per case and resolution), `summary.csv` (one row per gate) and
//! per-case `field.csv` dumps under `<out>/<experiment>/<case_id>/`.

pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};

use fracflux::SampledField;
use rayon::prelude::*;
use serde::Serialize;

use config::{Experiment, RunConfig};
use experiments::{fitted_order, headline_threshold, judge, overall, Case, GateResult, Status};

/// Failures mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Exit code when every gate passes.
pub const EXIT_OK: i32 = 0;
/// Exit code when a gate fails.
pub const EXIT_CHECK: i32 = 1;

/// One line of `results.csv`. The column set is versioned: change it only
/// together with [`RESULTS_VERSION`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub case_id: String,
    pub alpha: String,
    pub gamma_split: String,
    pub resolution: usize,
    pub residual_max: String,
    pub residual_l2: String,
    pub fitted_order: String,
    pub threshold: String,
    pub status: String,
}

/// Version of the `results.csv` column set.
pub const RESULTS_VERSION: u32 = 1;

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub case_id: String,
    pub gate: String,
    pub value: String,
    pub threshold: String,
    pub status: String,
    pub message: String,
}

fn num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.6e}"),
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

fn param(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

fn order(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_default()
}

/// Everything a finished case produced.
pub struct CaseReport {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub status: Status,
    pub field: Option<SampledField>,
    pub artifacts: Vec<(String, String)>,
    pub experiment: Experiment,
    pub case_id: String,
}

fn execute(case: &Case) -> CaseReport {
    let exp = case.experiment.name().to_string();
    let outcome = (case.run)();
    let (levels, field, artifacts, error) = match outcome {
        Ok(o) => (o.levels, o.field, o.artifacts, None),
        Err(e) => (Vec::new(), None, Vec::new(), Some(e.to_string())),
    };
    let gates: Vec<GateResult> = judge(&case.gates, &levels, case.order_norm, case.tolerance_scale);
    let status = if error.is_some() { Status::Fail } else { overall(&gates) };
    let threshold = num(headline_threshold(&case.gates, case.tolerance_scale));
    let rows = levels
        .iter()
        .enumerate()
        .map(|(i, l)| ResultRow {
            experiment: exp.clone(),
            case_id: case.case_id.clone(),
            alpha: param(case.alpha),
            gamma_split: param(case.gamma_split),
            resolution: l.resolution,
            residual_max: num(Some(l.max)),
            residual_l2: num(Some(l.l2)),
            fitted_order: order(if i > 0 { fitted_order(&levels[i - 1], l, case.order_norm) } else { None }),
            threshold: threshold.clone(),
            status: status.as_str().into(),
        })
        .collect();
    let summary = match error {
        Some(message) => vec![SummaryRow {
            experiment: exp.clone(),
            case_id: case.case_id.clone(),
            gate: "error".into(),
            value: String::new(),
            threshold: String::new(),
            status: Status::Fail.as_str().into(),
            message,
        }],
        None => gates
            .iter()
            .map(|g| SummaryRow {
                experiment: exp.clone(),
                case_id: case.case_id.clone(),
                gate: g.gate.into(),
                value: num(g.value),
                threshold: num(g.threshold),
                status: g.status.as_str().into(),
                message: g.note.clone().unwrap_or_default(),
            })
            .collect(),
    };
    CaseReport { rows, summary, status, field, artifacts, experiment: case.experiment, case_id: case.case_id.clone() }
}

/// Thread cap from `FRACFLUX_THREADS`; unset or invalid means the rayon
/// default.
pub fn thread_cap() -> Option<usize> {
    std::env::var("FRACFLUX_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Options given on the command line that override the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub only: Option<String>,
    pub seed: Option<u64>,
}

/// Result of a run: the exit code and the per-case reports.
pub struct RunSummary {
    pub exit_code: i32,
    pub out: PathBuf,
    pub reports: Vec<CaseReport>,
}

/// Loads `config_path`, runs it and writes the artifacts.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(only) = &opts.only {
        let e = Experiment::parse(only).ok_or_else(|| CliError::Config(format!("unknown experiment '{only}'")))?;
        cfg.experiments.retain(|x| x.experiment == e);
        if cfg.experiments.is_empty() {
            return Err(CliError::Config(format!("the config does not list '{only}'")));
        }
    }
    let seed = opts.seed.unwrap_or(cfg.seed);
    let out = opts.out.clone().unwrap_or_else(|| cfg.out.clone());
    let mut cases = Vec::new();
    for e in &cfg.experiments {
        cases.extend(experiments::cases(e, seed)?);
    }
    // create the output directory before the (long) computation
    std::fs::create_dir_all(&out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    let mut reports: Vec<CaseReport> = pool.install(|| cases.par_iter().map(execute).collect());
    reports.sort_by(|a, b| (a.experiment.name(), &a.case_id).cmp(&(b.experiment.name(), &b.case_id)));
    write_outputs(&out, &reports)?;
    let failed = reports.iter().any(|r| r.status == Status::Fail);
    Ok(RunSummary { exit_code: if failed { EXIT_CHECK } else { EXIT_OK }, out, reports })
}

fn write_outputs(out: &Path, reports: &[CaseReport]) -> Result<(), CliError> {
    let mut rows: Vec<&ResultRow> = reports.iter().flat_map(|r| &r.rows).collect();
    rows.sort_by(|a, b| (&a.experiment, &a.case_id, a.resolution).cmp(&(&b.experiment, &b.case_id, b.resolution)));
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    for r in reports.iter().flat_map(|r| &r.summary) {
        w.serialize(r)?;
    }
    w.flush()?;
    for r in reports {
        if r.field.is_none() && r.artifacts.is_empty() {
            continue;
        }
        let dir = out.join(r.experiment.name()).join(&r.case_id);
        std::fs::create_dir_all(&dir)?;
        if let Some(f) = &r.field {
            write_field(&dir.join("field.csv"), f)?;
        }
        for (name, text) in &r.artifacts {
            std::fs::write(dir.join(name), text)?;
        }
    }
    Ok(())
}

/// Writes a field as `x0, .., x{d-1}, component, re, im`, one row per node
/// and component in row-major order.
pub fn write_field(path: &Path, f: &SampledField) -> Result<(), CliError> {
    let grid = f.grid();
    let coords: Vec<Vec<f64>> = (0..grid.ndim()).map(|i| grid.coords(i).expect("axis in range")).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..grid.ndim()).map(|i| format!("x{i}")).collect();
    header.extend(["component".into(), "re".into(), "im".into()]);
    w.write_record(&header)?;
    for (idx, v) in f.evaluate().indexed_iter() {
        let nd = grid.ndim() + 1;
        let mut rec: Vec<String> = (0..nd - 1).map(|i| format!("{:.9e}", coords[i][idx[i]])).collect();
        rec.push(idx[nd - 1].to_string());
        rec.push(format!("{:.9e}", v.re));
        rec.push(format!("{:.9e}", v.im));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The experiment catalog: name and what it checks.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    Experiment::ALL
        .into_iter()
        .map(|e| {
            let what = match e {
                Experiment::VerifyOps => "power rule, composition of integrals, Grunwald-Letnikov convergence",
                Experiment::VerifyLeibniz => "Leibniz rules of the Laplace-convolution algebra",
                Experiment::MlAccuracy => "Mittag-Leffler function against exp, cos and erfc identities",
                Experiment::Diffusion1d => "mode residuals, Green's function mass, t^(-a/2) origin law, heat limit",
                Experiment::DiffusionDd => "d-dimensional modes, Green's function mass and heat limit",
                Experiment::Currents => "Gamma construction and stationarity-conservation laws",
                Experiment::Charges => "stationary charges and their conserved counterparts",
                Experiment::GeneralOperator => "telescoping identity for an operator spec file",
            };
            (e.name(), what)
        })
        .collect()
}

/// Catalog rows whose name contains `filter`.
pub fn list(filter: Option<&str>) -> Vec<(&'static str, &'static str)> {
    catalog().into_iter().filter(|(name, _)| filter.is_none_or(|f| name.contains(f))).collect()
}
