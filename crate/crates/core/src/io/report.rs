//! CSV sweep/evaluation reports.

use std::path::Path;

use crate::error::{MessiError, Result};

pub const REPORT_HEADER: [&str; 9] = [
    "k",
    "dims",
    "params",
    "compression_rate",
    "frobenius_error",
    "relative_error",
    "iterations",
    "converged",
    "seed",
];

/// Marker in the `dims` column of a cell that could not be run.
pub const SKIPPED: &str = "skipped";

/// One line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub k: usize,
    /// Per-cluster dims; empty for a skipped cell.
    pub dims: Vec<usize>,
    pub params: u64,
    pub compression_rate: f64,
    pub frobenius_error: f64,
    pub relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl ReportRow {
    /// Placeholder for a (k, budget) cell with no feasible dimension.
    pub fn skipped(k: usize, budget: u64, seed: u64) -> Self {
        Self {
            k,
            dims: Vec::new(),
            params: budget,
            compression_rate: f64::NAN,
            frobenius_error: f64::NAN,
            relative_error: f64::NAN,
            iterations: 0,
            converged: false,
            seed,
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.dims.is_empty()
    }
}

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn dims_field(dims: &[usize]) -> String {
    if dims.is_empty() {
        SKIPPED.to_string()
    } else {
        dims.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
    }
}

fn record(row: &ReportRow) -> [String; 9] {
    [
        row.k.to_string(),
        dims_field(&row.dims),
        row.params.to_string(),
        format_real(row.compression_rate),
        format_real(row.frobenius_error),
        format_real(row.relative_error),
        row.iterations.to_string(),
        row.converged.to_string(),
        row.seed.to_string(),
    ]
}

pub fn render_report(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_fmt = |e: csv::Error| MessiError::Format(format!("cannot render report: {e}"));
    w.write_record(REPORT_HEADER).map_err(to_fmt)?;
    for row in rows {
        w.write_record(record(row)).map_err(to_fmt)?;
    }
    w.into_inner()
        .map_err(|e| MessiError::Format(format!("cannot render report: {e}")))
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    super::npy::write_atomic(path, &render_report(rows)?)
}

/// Parses a report produced by [`write_report`].
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let bad = |msg: String| MessiError::Format(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let err = |i: usize| bad(format!("row {}: bad '{}' value '{}'", line + 1, REPORT_HEADER[i], field(i)));
        let dims = if field(1) == SKIPPED {
            Vec::new()
        } else {
            field(1)
                .split(';')
                .map(|s| s.parse().map_err(|_| err(1)))
                .collect::<Result<_>>()?
        };
        rows.push(ReportRow {
            k: field(0).parse().map_err(|_| err(0))?,
            dims,
            params: field(2).parse().map_err(|_| err(2))?,
            compression_rate: field(3).parse().map_err(|_| err(3))?,
            frobenius_error: field(4).parse().map_err(|_| err(4))?,
            relative_error: field(5).parse().map_err(|_| err(5))?,
            iterations: field(6).parse().map_err(|_| err(6))?,
            converged: field(7).parse().map_err(|_| err(7))?,
            seed: field(8).parse().map_err(|_| err(8))?,
        });
    }
    Ok(rows)
}
