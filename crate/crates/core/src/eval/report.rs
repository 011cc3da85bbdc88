//! AUROC report tables in CSV, Markdown and JSON.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::io::Method;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub in_dataset: String,
    pub ood_dataset: String,
    pub method: Method,
    pub k: Option<usize>,
    pub auroc: f64,
    pub n_in: usize,
    pub n_ood: usize,
    pub seed: u64,
    /// Ridge applied to the covariance, for Mahalanobis and RMD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    /// Fit plus scoring time. Kept out of the report files so they stay
    /// byte-identical between runs; see [`EvalReport::timings_json`].
    #[serde(skip)]
    pub wall_time: Duration,
}

impl EvalRow {
    fn key(&self) -> (&str, &str, Method, Option<usize>) {
        (&self.in_dataset, &self.ood_dataset, self.method, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Markdown => "report.md",
            ReportFormat::Json => "report.json",
        }
    }
}

/// AUROC table with one row per (pair, method, K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    /// Run parameters (methods, KNN, Gaussian and forest settings, seed).
    pub parameters: serde_json::Value,
    rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(parameters: serde_json::Value) -> Self {
        EvalReport {
            format_version: REPORT_FORMAT_VERSION,
            parameters,
            rows: Vec::new(),
        }
    }

    /// Adds a row, keeping rows in report order.
    pub fn push(&mut self, row: EvalRow) -> Result<()> {
        if !(0.0..=1.0).contains(&row.auroc) {
            return Err(OodError::Numerical(format!("AUROC {} outside [0, 1]", row.auroc)));
        }
        match self.rows.binary_search_by(|r| r.key().cmp(&row.key())) {
            Ok(_) => Err(OodError::InvalidParameter(format!(
                "duplicate report row {} vs {} / {} / K={:?}",
                row.in_dataset, row.ood_dataset, row.method, row.k
            ))),
            Err(pos) => {
                self.rows.insert(pos, row);
                Ok(())
            }
        }
    }

    /// Rows ordered by pair, then canonical method order, then K.
    pub fn rows(&self) -> &[EvalRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, in_dataset: &str, ood_dataset: &str, method: Method, k: Option<usize>) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.key() == (in_dataset, ood_dataset, method, k))
    }

    /// Dataset pairs in report order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let set: BTreeSet<_> = self
            .rows
            .iter()
            .map(|r| (r.in_dataset.clone(), r.ood_dataset.clone()))
            .collect();
        set.into_iter().collect()
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        if self.rows.is_empty() {
            return Err(OodError::Empty("report has no rows".into()));
        }
        Ok(match format {
            ReportFormat::Csv => self.render_csv(),
            ReportFormat::Markdown => self.render_markdown(),
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serialises") + "\n",
        })
    }

    fn render_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["in_dataset", "ood_dataset", "method", "k", "auroc", "n_in", "n_ood", "seed", "ridge"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.in_dataset.clone(),
                r.ood_dataset.clone(),
                r.method.id().to_string(),
                r.k.map(|k| k.to_string()).unwrap_or_default(),
                format_auroc(r.auroc),
                r.n_in.to_string(),
                r.n_ood.to_string(),
                r.seed.to_string(),
                r.ridge.map(|v| format!("{v:e}")).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory write");
        String::from_utf8(bytes).expect("csv output is utf-8")
    }

    fn render_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| In-distribution | OOD | Method | K | AUROC | n_in | n_ood |\n");
        out.push_str("|---|---|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.in_dataset,
                r.ood_dataset,
                r.method.title(),
                k,
                format_auroc(r.auroc),
                r.n_in,
                r.n_ood
            );
        }
        out
    }

    /// Per-row wall times in milliseconds, in report order.
    pub fn timings_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "in_dataset": r.in_dataset,
                    "ood_dataset": r.ood_dataset,
                    "method": r.method,
                    "k": r.k,
                    "wall_time_ms": r.wall_time.as_secs_f64() * 1e3,
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("timings serialise") + "\n"
    }
}

/// Four decimals, as in published AUROC tables.
pub fn format_auroc(v: f64) -> String {
    format!("{v:.4}")
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = report.render(format)?;
    fs::write(path, text).map_err(|e| OodError::io(path, e))
}

/// Writes report.csv, report.md, report.json and timings.json into `dir`.
pub fn write_report_dir(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OodError::io(dir, e))?;
    for format in ReportFormat::ALL {
        emit_report(report, format, dir.join(format.file_name()))?;
    }
    let path = dir.join("timings.json");
    fs::write(&path, report.timings_json()).map_err(|e| OodError::io(&path, e))
}
