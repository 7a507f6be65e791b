//! CSV, JSON and plot-data emission with atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::run::RunReport;

/// Version of the `summary.json` layout.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    /// File stem; the CSV is written as `<name>.csv`.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|c| quote(c)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

fn quote(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Formats a number for a CSV cell; shortest round-trip representation.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|_, x| !x.is_null());
            m.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

/// Two-column series for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotSeries {
    pub name: String,
    pub columns: (String, String),
    pub points: Vec<(f64, f64)>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.display().to_string(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn summary(report: &RunReport) -> serde_json::Value {
    let mut config = serde_json::to_value(&report.config).expect("config serializes");
    strip_nulls(&mut config);
    json!({
        "schema": SCHEMA_VERSION,
        "tool": "greenlab",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": report.kind.name(),
        "seed": report.config.seed,
        "workers": report.workers,
        "pass": report.pass(),
        "verdicts": report.verdicts,
        "artifacts": report.tables.iter().map(Table::file_name).collect::<Vec<_>>(),
        "samples": report.samples,
        "config": config,
        "report": report.detail,
    })
}

/// Writes every table, `summary.json` and `timing.json` into `dir`.
///
/// Wall-clock figures go to `timing.json` only, so the other files are
/// byte-identical across runs with the same configuration.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for t in &report.tables {
        let p = dir.join(t.file_name());
        write_atomic(&p, t.to_csv().as_bytes())?;
        written.push(p);
    }
    let mut text = serde_json::to_string_pretty(&summary(report)).expect("summary serializes");
    text.push('\n');
    let p = dir.join("summary.json");
    write_atomic(&p, text.as_bytes())?;
    written.push(p);

    let secs = report.elapsed.as_secs_f64();
    let timing = json!({
        "wall_seconds": secs,
        "samples": report.samples,
        "samples_per_second": if secs > 0.0 { report.samples as f64 / secs } else { 0.0 },
    });
    let p = dir.join("timing.json");
    write_atomic(&p, format!("{}\n", serde_json::to_string_pretty(&timing).expect("timing serializes")).as_bytes())?;
    written.push(p);
    Ok(written)
}

/// Writes each plot series as `<name>.dat`, two whitespace-separated columns.
///
/// A report without verdicts produces no files and a warning.
pub fn emit_plotdata(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if report.verdicts.is_empty() {
        eprintln!("warning: {} report has no verdicts; no plot data written", report.kind.name());
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for s in &report.plots {
        let mut text = format!("# {} {}\n", s.columns.0, s.columns.1);
        for (x, y) in &s.points {
            text.push_str(&format!("{x} {y}\n"));
        }
        let p = dir.join(format!("{}.dat", s.name));
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec!["1".into(), "p, q".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,\"p, q\"\n");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(6.5e-7), "6.5e-7");
        assert_eq!(num(0.0), "0");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
