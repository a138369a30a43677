//! Evaluation reports, appended as JSON lines to `reports.jsonl` in the
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use jket_core::metrics::EvalReport;

use crate::archive::write_atomic;
use crate::error::{CliError, CoreContext, Result};

pub const REPORTS_FILE: &str = "reports.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub task: String,
    /// Absent metrics are `null`.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub datasets: Vec<String>,
    pub seed: u64,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` wins when set.
    pub timestamp: u64,
}

pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl ReportRecord {
    pub fn new(report: &EvalReport, datasets: &[&Path], seed: u64) -> Result<Self> {
        report.check_ranges().during("evaluate")?;
        Ok(ReportRecord {
            task: report.task.clone(),
            metrics: report.metrics.clone(),
            datasets: datasets.iter().map(|p| p.display().to_string()).collect(),
            seed,
            timestamp: timestamp(),
        })
    }

    pub fn to_report(&self) -> EvalReport {
        EvalReport {
            task: self.task.clone(),
            metrics: self.metrics.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn read_all(dir: &Path) -> Result<Vec<ReportRecord>> {
    let path = dir.join(REPORTS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(&path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::format(&path, Some(i + 1), e.to_string())))
        .collect()
}

/// Append records; existing lines are never rewritten.
pub fn append(dir: &Path, records: &[ReportRecord]) -> Result<()> {
    let path = dir.join(REPORTS_FILE);
    let mut text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(CliError::io(&path, e)),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    for r in records {
        text.push_str(&r.to_json());
        text.push('\n');
    }
    write_atomic(&path, text.as_bytes())
}

/// Most recent report for `task` over the same datasets.
pub fn latest(dir: &Path, task: &str, datasets: &[String]) -> Result<Option<EvalReport>> {
    Ok(read_all(dir)?
        .into_iter()
        .rev()
        .find(|r| r.task == task && r.datasets == datasets)
        .map(|r| r.to_report()))
}
