//! On-disk formats and their readers.
//!
//! * Field files: a 16-byte header (`b"MF"`, dimension as `u16`, then
//!   `N₁, N₂, N₃` as `u32`, unused axes set to 1; all little-endian) followed
//!   by the values as little-endian `f64` in row-major order.
//! * Trajectory directories: `meta.json` (box, sample times, family, σ) plus
//!   `rho_KKKK.bin` and `theta_KKKK.bin` per sample.
//! * Series CSV: `t,E,O,S_00,...,I_..,Tplus_..,Tminus_..,Emat_..` with each
//!   matrix written as its row-major upper triangle. `O` is `NaN` when the
//!   scalar energy is undefined.
//! * Reports: a JSON array of check reports.
//! * Long CSV: `time,quantity,component,value`, one value per line.
//!
//! Floats are printed in shortest round-trip form, so every file reads back
//! bit-exactly.

use crate::{CliError, CliResult};
use matflow_core::checks::CheckReport;
use matflow_core::flows::FlowTrajectory;
use matflow_core::functionals::{FunctionalSeries, SeriesRecord};
use matflow_core::sym::{packed_pairs, SymMatrix};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const FIELD_MAGIC: [u8; 2] = *b"MF";
pub const FIELD_HEADER_LEN: usize = 16;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str, path: &Path) -> CliResult<f64> {
    s.trim()
        .parse()
        .map_err(|_| io_err(path, format!("not a number: {s:?}")))
}

/// Encodes one field.
pub fn encode_field(points: &[usize], values: &[f64]) -> CliResult<Vec<u8>> {
    let dim = points.len();
    if !(1..=3).contains(&dim) || points.iter().product::<usize>() != values.len() {
        return Err(CliError::Io(format!(
            "field of {} values does not match shape {points:?}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(FIELD_HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&FIELD_MAGIC);
    out.extend_from_slice(&(dim as u16).to_le_bytes());
    for a in 0..3 {
        let n = points.get(a).copied().unwrap_or(1);
        let n = u32::try_from(n).map_err(|_| CliError::Io(format!("axis length {n} too large")))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes one field into `(points, values)`.
pub fn decode_field(bytes: &[u8]) -> CliResult<(Vec<usize>, Vec<f64>)> {
    let bad = |m: &str| CliError::Io(format!("field file: {m}"));
    if bytes.len() < FIELD_HEADER_LEN || bytes[..2] != FIELD_MAGIC {
        return Err(bad("missing header"));
    }
    let dim = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    if !(1..=3).contains(&dim) {
        return Err(bad("dimension must be 1, 2 or 3"));
    }
    let points: Vec<usize> = (0..dim)
        .map(|a| {
            let o = 4 + 4 * a;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("four bytes")) as usize
        })
        .collect();
    let len: usize = points.iter().product();
    let body = &bytes[FIELD_HEADER_LEN..];
    if body.len() != 8 * len {
        return Err(bad("payload length does not match the header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    Ok((points, values))
}

pub fn write_field(path: &Path, points: &[usize], values: &[f64]) -> CliResult<()> {
    write_file(path, &encode_field(points, values)?)
}

pub fn read_field(path: &Path) -> CliResult<(Vec<usize>, Vec<f64>)> {
    decode_field(&fs::read(path).map_err(|e| io_err(path, e))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    pub family: String,
    pub sigma: f64,
    pub times: Vec<f64>,
}

/// Sampled density and phase values, as stored in a trajectory directory.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTrajectory {
    pub meta: TrajectoryMeta,
    pub rho: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl StoredTrajectory {
    pub fn from_flow(traj: &FlowTrajectory) -> StoredTrajectory {
        let grid = traj.grid();
        StoredTrajectory {
            meta: TrajectoryMeta {
                extent: grid.extent().to_vec(),
                points: grid.points().to_vec(),
                family: traj.family().name().to_string(),
                sigma: traj.sigma(),
                times: traj.times().to_vec(),
            },
            rho: traj.snapshots().iter().map(|s| s.density().values().to_vec()).collect(),
            theta: traj.snapshots().iter().map(|s| s.phase().theta().values().to_vec()).collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("meta.json"), &self.meta)?;
        for (k, (r, th)) in self.rho.iter().zip(&self.theta).enumerate() {
            write_field(&dir.join(format!("rho_{k:04}.bin")), &self.meta.points, r)?;
            write_field(&dir.join(format!("theta_{k:04}.bin")), &self.meta.points, th)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> CliResult<StoredTrajectory> {
        let meta: TrajectoryMeta = read_json(&dir.join("meta.json"))?;
        let mut rho = Vec::with_capacity(meta.times.len());
        let mut theta = Vec::with_capacity(meta.times.len());
        for k in 0..meta.times.len() {
            for (name, out) in [("rho", &mut rho), ("theta", &mut theta)] {
                let path = dir.join(format!("{name}_{k:04}.bin"));
                let (points, values) = read_field(&path)?;
                if points != meta.points {
                    return Err(io_err(&path, "shape differs from meta.json"));
                }
                out.push(values);
            }
        }
        Ok(StoredTrajectory { meta, rho, theta })
    }
}

/// Matrix quantities of the series CSV with their column prefixes.
const MATRIX_COLUMNS: [(&str, fn(&SeriesRecord) -> SymMatrix); 5] = [
    ("S", |r| r.s_mat),
    ("I", |r| r.i_mat),
    ("Tplus", |r| r.t_plus),
    ("Tminus", |r| r.t_minus),
    ("Emat", |r| r.e_mat),
];

pub fn series_columns(dim: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "E".to_string(), "O".to_string()];
    for (prefix, _) in MATRIX_COLUMNS {
        for (i, j) in packed_pairs(dim) {
            cols.push(format!("{prefix}_{i}{j}"));
        }
    }
    cols
}

/// The series CSV in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub dim: usize,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SeriesTable {
    pub fn from_series(series: &FunctionalSeries) -> SeriesTable {
        let rows = series
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.t, r.entropy, r.energy.unwrap_or(f64::NAN)];
                for (_, pick) in MATRIX_COLUMNS {
                    row.extend_from_slice(pick(r).packed());
                }
                row
            })
            .collect();
        SeriesTable {
            dim: series.dim,
            columns: series_columns(series.dim),
            rows,
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> CliResult<SeriesTable> {
        let text = read_text(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| io_err(path, "empty series file"))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let dim = (1..=3)
            .find(|&n| series_columns(n) == columns)
            .ok_or_else(|| io_err(path, "unrecognised series header"))?;
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let row = l.split(',').map(|c| parse_f64(c, path)).collect::<CliResult<Vec<f64>>>()?;
                if row.len() != columns.len() {
                    return Err(io_err(path, "ragged row"));
                }
                Ok(row)
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(SeriesTable { dim, columns, rows })
    }

    /// One `(time, quantity, component, value)` line per finite value.
    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut out = Vec::new();
        for row in &self.rows {
            for (c, name) in self.columns.iter().enumerate().skip(1) {
                if !row[c].is_finite() {
                    continue;
                }
                let (quantity, component) = name.split_once('_').unwrap_or((name.as_str(), ""));
                out.push(LongRow {
                    time: row[0],
                    quantity: quantity.to_string(),
                    component: component.to_string(),
                    value: row[c],
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongRow {
    pub time: f64,
    pub quantity: String,
    pub component: String,
    pub value: f64,
}

pub const LONG_HEADER: &str = "time,quantity,component,value";

pub fn long_csv(rows: &[LongRow]) -> String {
    let mut s = String::from(LONG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(r.time), r.quantity, r.component, fmt_f64(r.value));
    }
    s
}

pub fn read_long_csv(path: &Path) -> CliResult<Vec<LongRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LONG_HEADER) {
        return Err(io_err(path, "unrecognised long-format header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != 4 {
                return Err(io_err(path, "expected four cells per line"));
            }
            Ok(LongRow {
                time: parse_f64(cells[0], path)?,
                quantity: cells[1].to_string(),
                component: cells[2].to_string(),
                value: parse_f64(cells[3], path)?,
            })
        })
        .collect()
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, to_json(value)?.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| io_err(path, e))
}

pub fn write_reports(path: &Path, reports: &[CheckReport]) -> CliResult<()> {
    write_json(path, &reports)
}

pub fn read_reports(path: &Path) -> CliResult<Vec<CheckReport>> {
    read_json(path)
}

fn fmt_direction(d: &[f64]) -> String {
    let parts: Vec<String> = d.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Failing components listed per checker in [`summary`].
const MAX_LISTED: usize = 8;

/// Human-readable verdicts: one line per checker, then the failing
/// components and notes of checkers that did not pass.
pub fn summary(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    if reports.is_empty() {
        s.push_str("no checks recorded\n");
        return s;
    }
    let _ = writeln!(
        s,
        "{:<18} {:<8} {:>13} {:>11}  witness",
        "checker", "verdict", "worst margin", "tolerance"
    );
    for r in reports {
        let verdict = if r.pass {
            "PASS"
        } else if !r.hypotheses_ok {
            "REFUSED"
        } else {
            "FAIL"
        };
        let witness = match &r.witness {
            Some(w) if w.direction.is_empty() => format!("t = {} ({})", w.time, w.label),
            Some(w) => format!("t = {}, direction {} ({})", w.time, fmt_direction(&w.direction), w.label),
            None => "-".to_string(),
        };
        let margin = if r.hypotheses_ok {
            format!("{:.4e}", r.worst_margin)
        } else {
            "-".to_string()
        };
        let _ = writeln!(
            s,
            "{:<18} {:<8} {:>13} {:>11.3e}  {witness}",
            r.name, verdict, margin, r.tolerance
        );
    }
    for r in reports.iter().filter(|r| !r.pass) {
        let _ = writeln!(s, "\n{}:", r.name);
        for h in r.hypotheses.iter().filter(|h| !h.ok) {
            let _ = writeln!(s, "  hypothesis not met: {}", h.name);
        }
        let failing: Vec<_> = r.components.iter().filter(|c| !(c.margin >= -c.tolerance)).collect();
        for c in failing.iter().take(MAX_LISTED) {
            let at = c
                .witness
                .as_ref()
                .map(|w| {
                    if w.direction.is_empty() {
                        format!(" at t = {}", w.time)
                    } else {
                        format!(" at t = {}, direction {}", w.time, fmt_direction(&w.direction))
                    }
                })
                .unwrap_or_default();
            let _ = writeln!(s, "  {}: margin {:.4e} (tolerance {:.3e}){at}", c.name, c.margin, c.tolerance);
        }
        if failing.len() > MAX_LISTED {
            let _ = writeln!(s, "  ... and {} more failing components", failing.len() - MAX_LISTED);
        }
        for n in &r.notes {
            let _ = writeln!(s, "  note: {n}");
        }
    }
    s
}
