//! Report files: metrics as JSON and CSV, sweeps as CSV, decision logs as
//! one JSONL file per stream.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::simulate::{StreamLog, SweepRow};
use crate::error::{Error, Result};
use crate::router::{write_decision_log, DeferralSource};

/// Flat CSV view of one report; `name` identifies the run or sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub max_enc: u32,
    pub max_defer: u32,
    pub deferral_source: DeferralSource,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub vlm_suc_rate: f64,
    pub vlm_defer_rate: f64,
    pub vlm_invoc_rate: f64,
    pub avg_latency_s: f64,
    pub total: usize,
    pub scored: usize,
    pub unresolved: usize,
    pub expert_failed: usize,
}

impl SummaryRow {
    pub fn new(name: &str, max_enc: u32, max_defer: u32, deferral_source: DeferralSource, r: &MetricsReport) -> Self {
        SummaryRow {
            name: name.to_string(),
            max_enc,
            max_defer,
            deferral_source,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            vlm_suc_rate: r.vlm_suc_rate,
            vlm_defer_rate: r.vlm_defer_rate,
            vlm_invoc_rate: r.vlm_invoc_rate,
            avg_latency_s: r.avg_latency_s,
            total: r.counts.total,
            scored: r.counts.scored,
            unresolved: r.counts.unresolved,
            expert_failed: r.counts.expert_failed,
        }
    }
}

impl From<&SweepRow> for SummaryRow {
    fn from(row: &SweepRow) -> Self {
        SummaryRow::new(&row.name, row.max_enc, row.max_defer, row.deferral_source, &row.report)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let rows: Vec<SummaryRow> = rows.iter().map(SummaryRow::from).collect();
    write_summary_csv(path, &rows)
}

/// Writes `<dir>/<stream_id>.jsonl` for every log and returns the paths.
pub fn write_stream_logs(dir: impl AsRef<Path>, logs: &[StreamLog]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    logs.iter()
        .map(|log| {
            if log.stream_id.contains(['/', '\\']) || log.stream_id.starts_with('.') {
                return Err(Error::Invalid(format!("stream id `{}` is not a safe file name", log.stream_id)));
            }
            let path = dir.join(format!("{}.jsonl", log.stream_id));
            write_decision_log(&path, &log.records)?;
            Ok(path)
        })
        .collect()
}

/// One-line human summary.
pub fn describe(r: &MetricsReport) -> String {
    format!(
        "acc {:.4}  m-f1 {:.4}  vlm_suc {:.4}  vlm_defer {:.4}  vlm_invoc {:.4}  latency {:.3}s  ({} scored, {} unresolved)",
        r.accuracy, r.macro_f1, r.vlm_suc_rate, r.vlm_defer_rate, r.vlm_invoc_rate, r.avg_latency_s, r.counts.scored, r.counts.unresolved
    )
}
