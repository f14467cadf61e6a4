//! The four subcommands.
//!
//! A run directory holds `scenario.json`, `flow.json` (hypotheses, residual
//! and solver diagnostics), `series.csv`, `series.json`, `trajectory/` and,
//! after `check`, `report.json` and `summary.txt`. `report` adds `long.csv`.
//! Nothing written depends on wall-clock time or thread count.

use crate::artifacts::{
    long_csv, read_reports, summary, write_file, write_json, write_reports, SeriesTable, StoredTrajectory,
};
use crate::config::{CheckSpec, ScenarioFile};
use crate::{CliError, CliResult};
use matflow_core::checks::{self, BridgeSettings, CheckReport, DEFAULT_SEED};
use matflow_core::flows::{Boundary, Diagnostics, FlowTrajectory, Hypotheses, Residual};
use matflow_core::functionals::{assemble_series, FunctionalSeries};
use matflow_core::grid::Density;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Overrides from the command line.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Result of a command that did not hit a plumbing or construction error.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub message: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub family: String,
    pub boundary: Boundary,
    pub hypotheses: Hypotheses,
    pub residual: Option<Residual>,
    pub diagnostics: Diagnostics,
}

fn load(path: &Path, globals: &Globals) -> CliResult<(ScenarioFile, PathBuf)> {
    let file = ScenarioFile::load(path)?;
    let dir = globals.out.clone().unwrap_or_else(|| file.output_dir());
    Ok((file, dir))
}

fn seed_of(file: &ScenarioFile, globals: &Globals) -> u64 {
    globals.seed.or(file.seed).unwrap_or(DEFAULT_SEED)
}

/// Builds the flow and its series and writes the run artifacts into `dir`.
pub fn execute(file: &ScenarioFile, dir: &Path) -> CliResult<(FlowTrajectory, FunctionalSeries)> {
    let traj = file.scenario.build().map_err(CliError::classify)?;
    let series = assemble_series(&traj).map_err(CliError::Construction)?;
    write_json(&dir.join("scenario.json"), file)?;
    write_json(
        &dir.join("flow.json"),
        &FlowInfo {
            family: traj.family().name().to_string(),
            boundary: traj.boundary(),
            hypotheses: traj.hypotheses().clone(),
            residual: traj.residual(),
            diagnostics: traj.diagnostics().clone(),
        },
    )?;
    StoredTrajectory::from_flow(&traj).write(&dir.join("trajectory"))?;
    SeriesTable::from_series(&series).write(&dir.join("series.csv"))?;
    write_json(&dir.join("series.json"), &series)?;
    Ok((traj, series))
}

pub fn cmd_run(path: &Path, globals: &Globals) -> CliResult<Outcome> {
    let (file, dir) = load(path, globals)?;
    let (traj, _) = execute(&file, &dir)?;
    let mut message = format!(
        "{}: {} flow, {} samples written to {}",
        file.name,
        traj.family().name(),
        traj.len(),
        dir.display()
    );
    if let Some(r) = traj.residual() {
        let _ = write!(message, " (residual: continuity {:.2e}, phase {:.2e})", r.continuity, r.phase);
    }
    Ok(Outcome { passed: true, message })
}

fn marginals(file: &ScenarioFile) -> CliResult<(Density, Density)> {
    let (a, z) = file
        .marginals()
        .ok_or_else(|| CliError::Config("bridge checks need a bridge scenario".into()))?;
    let grid = file.scenario.grid.build().map_err(CliError::Invalid)?;
    Ok((
        a.build(&grid).map_err(CliError::Invalid)?,
        z.build(&grid).map_err(CliError::Invalid)?,
    ))
}

fn run_check(
    spec: &CheckSpec,
    file: &ScenarioFile,
    traj: &FlowTrajectory,
    series: &FunctionalSeries,
    seed: u64,
) -> CliResult<CheckReport> {
    let default = checks::default_tolerance(series);
    let tol = |t: &Option<f64>| t.unwrap_or(default);
    let settings = BridgeSettings::default();
    let report = match spec {
        CheckSpec::TInequality { tolerance } => checks::check_t_inequality(series, tol(tolerance), seed),
        CheckSpec::SInequality { tolerance } => checks::check_s_inequality(series, tol(tolerance), seed),
        CheckSpec::EntropyGrowth { tolerance } => checks::check_entropy_growth(series, tol(tolerance)),
        CheckSpec::Turnpike { tolerance } => checks::check_turnpike(series, tol(tolerance)),
        CheckSpec::Energy { tolerance } => checks::check_energy(series, tol(tolerance)),
        CheckSpec::MatrixEnergy { tolerance } => checks::check_matrix_energy(series, tol(tolerance)),
        CheckSpec::CostIdentity { tolerance } => checks::check_cost_identity(series, tol(tolerance)),
        CheckSpec::CostInequality { tolerance } => checks::check_cost_inequality(series, tol(tolerance)),
        CheckSpec::TimeSymmetry { tolerance } => checks::check_time_symmetry(traj, tol(tolerance)),
        CheckSpec::Longtime { taus, tolerance } => {
            let (a, z) = marginals(file)?;
            checks::check_longtime(&a, &z, file.scenario.coefficients.sigma, taus, settings, *tolerance)
        }
        CheckSpec::Evi {
            times,
            fd_step,
            tolerance,
        } => {
            let (a, z) = marginals(file)?;
            checks::check_evi(&a, &z, times, *fd_step, settings, *tolerance, seed)
        }
        CheckSpec::Contraction {
            tau_heat,
            n_steps,
            tolerance,
        } => {
            let (a, z) = marginals(file)?;
            checks::check_contraction(&a, &z, *tau_heat, *n_steps, settings, *tolerance)
        }
    };
    report.map_err(CliError::classify)
}

/// Runs the requested checkers concurrently; the output order follows the
/// scenario file.
pub fn run_checks(
    file: &ScenarioFile,
    traj: &FlowTrajectory,
    series: &FunctionalSeries,
    seed: u64,
) -> CliResult<Vec<CheckReport>> {
    file.checks
        .par_iter()
        .map(|spec| run_check(spec, file, traj, series, seed))
        .collect()
}

fn verdict(reports: &[CheckReport]) -> (bool, String) {
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        (true, format!("all {} checks passed", reports.len()))
    } else {
        (false, format!("failed checks: {}", failed.join(", ")))
    }
}

pub fn cmd_check(path: &Path, globals: &Globals) -> CliResult<Outcome> {
    let (file, dir) = load(path, globals)?;
    if file.checks.is_empty() {
        return Err(CliError::Config("the scenario requests no checks".into()));
    }
    let seed = seed_of(&file, globals);
    let (traj, series) = execute(&file, &dir)?;
    let reports = run_checks(&file, &traj, &series, seed)?;
    write_reports(&dir.join("report.json"), &reports)?;
    let text = summary(&reports);
    write_file(&dir.join("summary.txt"), text.as_bytes())?;
    let (passed, line) = verdict(&reports);
    Ok(Outcome {
        passed,
        message: format!("{text}\n{}: {line}", file.name),
    })
}

/// Sweepable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Tau,
    Points,
    Samples,
    Sigma,
}

impl Axis {
    pub fn parse(name: &str) -> CliResult<Axis> {
        match name {
            "tau" => Ok(Axis::Tau),
            "points" | "resolution" => Ok(Axis::Points),
            "samples" => Ok(Axis::Samples),
            "sigma" => Ok(Axis::Sigma),
            _ => Err(CliError::Config(format!(
                "unknown sweep axis {name:?} (expected tau, points, samples or sigma)"
            ))),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Axis::Tau => "tau",
            Axis::Points => "points",
            Axis::Samples => "samples",
            Axis::Sigma => "sigma",
        }
    }

    fn integral(&self) -> bool {
        matches!(self, Axis::Points | Axis::Samples)
    }
}

/// Parses a comma-separated value list; an empty list is a config error.
pub fn parse_values(axis: Axis, text: &str) -> CliResult<Vec<f64>> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    items
        .into_iter()
        .map(|s| {
            let v: f64 = s
                .parse()
                .map_err(|_| CliError::Config(format!("sweep value {s:?} is not a number")))?;
            let ok = if axis.integral() {
                v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64
            } else {
                v.is_finite() && (v > 0.0 || (axis == Axis::Sigma && v == 0.0))
            };
            if ok {
                Ok(v)
            } else {
                Err(CliError::Config(format!("invalid {} value {s}", axis.label())))
            }
        })
        .collect()
}

fn apply(file: &ScenarioFile, axis: Axis, v: f64) -> ScenarioFile {
    let mut f = file.clone();
    match axis {
        Axis::Tau => f.scenario.tau = v,
        Axis::Points => f.scenario.grid.points = vec![v as usize; f.scenario.grid.points.len()],
        Axis::Samples => f.scenario.samples = v as usize,
        Axis::Sigma => f.scenario.coefficients.sigma = v,
    }
    f
}

fn value_label(axis: Axis, v: f64) -> String {
    if axis.integral() {
        format!("{}_{}", axis.label(), v as u64)
    } else {
        format!("{}_{v:?}", axis.label())
    }
}

/// Largest absolute difference between two series, per quantity group, on
/// matching sample times.
fn series_change(a: &SeriesTable, b: &SeriesTable) -> Option<Vec<(String, f64)>> {
    let (ta, tb) = (a.column("t")?, b.column("t")?);
    if ta.len() != tb.len() || ta.iter().zip(&tb).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs())) {
        return None;
    }
    let mut groups: Vec<(String, f64)> = Vec::new();
    for (c, name) in a.columns.iter().enumerate().skip(1) {
        let g = name.split_once('_').map(|(q, _)| q).unwrap_or(name).to_string();
        let d = a
            .rows
            .iter()
            .zip(&b.rows)
            .map(|(ra, rb)| (ra[c] - rb[c]).abs())
            .filter(|d| !d.is_nan())
            .fold(0.0f64, f64::max);
        match groups.iter_mut().find(|(n, _)| *n == g) {
            Some(e) => e.1 = e.1.max(d),
            None => groups.push((g, d)),
        }
    }
    Some(groups)
}

fn convergence_table(values: &[f64], tables: &[SeriesTable]) -> CliResult<String> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let reference = *order.last().expect("non-empty sweep");
    let mut out = String::new();
    let mut prev: Option<f64> = None;
    for &i in &order[..order.len() - 1] {
        let groups = series_change(&tables[i], &tables[reference])
            .ok_or_else(|| CliError::Config("resolution sweep runs have different sample times".into()))?;
        if out.is_empty() {
            let names: Vec<&str> = groups.iter().map(|(n, _)| n.as_str()).collect();
            let _ = writeln!(out, "points,reference,{},max,ratio", names.join(","));
        }
        let max = groups.iter().map(|(_, d)| *d).fold(0.0f64, f64::max);
        let ratio = prev.map(|p| p / max).unwrap_or(f64::NAN);
        let cells: Vec<String> = groups.iter().map(|(_, d)| format!("{d:?}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{max:?},{ratio:?}",
            values[i] as u64,
            values[reference] as u64,
            cells.join(",")
        );
        prev = Some(max);
    }
    Ok(out)
}

pub fn cmd_sweep(path: &Path, axis: &str, values: &str, globals: &Globals) -> CliResult<Outcome> {
    let axis = Axis::parse(axis)?;
    let values = parse_values(axis, values)?;
    let (file, dir) = load(path, globals)?;
    let seed = seed_of(&file, globals);
    let mut tables = Vec::with_capacity(values.len());
    let mut message = String::new();
    for &v in &values {
        let f = apply(&file, axis, v);
        f.validate()?;
        let sub = dir.join(value_label(axis, v));
        let (_, series) = execute(&f, &sub)?;
        tables.push(SeriesTable::from_series(&series));
        let _ = writeln!(message, "{}: {}", value_label(axis, v), sub.display());
    }
    let mut passed = true;
    match axis {
        Axis::Tau => {
            if file.marginals().is_some() {
                let tolerance = file
                    .checks
                    .iter()
                    .find_map(|c| match c {
                        CheckSpec::Longtime { tolerance, .. } => Some(*tolerance),
                        _ => None,
                    })
                    .unwrap_or(1e-4);
                let (a, z) = marginals(&file)?;
                let report = checks::check_longtime(
                    &a,
                    &z,
                    file.scenario.coefficients.sigma,
                    &values,
                    BridgeSettings::default(),
                    tolerance,
                )
                .map_err(CliError::classify)?
                .with_seed(seed);
                let reports = vec![report];
                write_reports(&dir.join("report.json"), &reports)?;
                let text = summary(&reports);
                write_file(&dir.join("summary.txt"), text.as_bytes())?;
                let (ok, line) = verdict(&reports);
                passed = ok;
                let _ = write!(message, "{text}\nlongtime: {line}");
            }
        }
        Axis::Points if values.len() > 1 => {
            let table = convergence_table(&values, &tables)?;
            write_file(&dir.join("convergence.csv"), table.as_bytes())?;
            message.push_str(&table);
        }
        _ => {}
    }
    Ok(Outcome { passed, message })
}

/// Writes `long.csv` and `summary.txt` for a run or sweep directory.
pub fn cmd_report(dir: &Path) -> CliResult<Outcome> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("run directory {} does not exist", dir.display())));
    }
    let series_path = dir.join("series.csv");
    let report_path = dir.join("report.json");
    if !series_path.is_file() && !report_path.is_file() {
        return Err(CliError::Config(format!(
            "{} holds neither series.csv nor report.json",
            dir.display()
        )));
    }
    let mut message = String::new();
    if series_path.is_file() {
        let table = SeriesTable::read(&series_path)?;
        let rows = table.long_rows();
        write_file(&dir.join("long.csv"), long_csv(&rows).as_bytes())?;
        let _ = writeln!(message, "long.csv: {} values", rows.len());
    }
    let reports = if report_path.is_file() {
        read_reports(&report_path)?
    } else {
        Vec::new()
    };
    let text = summary(&reports);
    write_file(&dir.join("summary.txt"), text.as_bytes())?;
    message.push_str(&text);
    Ok(Outcome {
        passed: true,
        message,
    })
}
