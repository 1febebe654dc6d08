//! Report documents and their on-disk forms.

use std::path::Path;

use densecotrain::cotrain::{RoundRecord, ViewReports};
use densecotrain::tuner::{TraceRow, GENE_NAMES};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const REPORT_FORMAT: &str = "densecotrain-run-report";
pub const REPORT_VERSION: u32 = 1;

pub const RUN_REPORT: &str = "run_report.json";
pub const CONFIG_ECHO: &str = "config.json";
pub const HISTORY_CSV: &str = "history.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const BEST_HYPER: &str = "best_hyper.json";
pub const TUNE_REPORT: &str = "tune_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    /// Fully resolved configuration; feeding it back via `--config` reruns the experiment.
    pub config: RunConfig,
    /// Hash of the labeled images and their annotations.
    pub labeled_fingerprint: String,
    pub best_round: usize,
    pub test: ViewReports,
    pub history: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning_trace: Option<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub best_score: f64,
    pub evaluations: usize,
    pub trace: String,
    pub timings: Timings,
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::runtime(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn history_csv(history: &[RoundRecord]) -> CliResult<Vec<u8>> {
    csv_bytes(
        &[
            "round",
            "val_map_a",
            "val_map_b",
            "val_map_combined",
            "generated_by_a",
            "generated_by_b",
            "accepted_for_a",
            "accepted_for_b",
            "precision_a",
            "precision_b",
        ],
        history.iter().map(|r| {
            vec![
                r.round.to_string(),
                r.val_map_a.to_string(),
                r.val_map_b.to_string(),
                r.val_map_combined.to_string(),
                r.generated_by_a.to_string(),
                r.generated_by_b.to_string(),
                r.accepted_for_a.to_string(),
                r.accepted_for_b.to_string(),
                opt(r.precision_a),
                opt(r.precision_b),
            ]
        }),
    )
}

/// `index,score,best` followed by one column per gene.
pub fn trace_csv(trace: &[TraceRow]) -> CliResult<Vec<u8>> {
    let mut header = vec!["index", "score", "best"];
    header.extend(GENE_NAMES);
    csv_bytes(
        &header,
        trace.iter().map(|r| {
            let mut row = vec![r.index.to_string(), r.score.to_string(), r.best.to_string()];
            row.extend(r.genes.iter().map(ToString::to_string));
            row
        }),
    )
}

/// `(index, best)` pairs from a trace CSV.
pub fn read_trace_best(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::usage(format!("{}: malformed trace row", path.display())))
        };
        out.push((num(0)?, num(2)?));
    }
    Ok(out)
}
