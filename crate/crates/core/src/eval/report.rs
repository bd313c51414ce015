use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, EvalError, EvalOptions};

pub const REPORT_COLUMNS: [&str; 8] =
    ["group", "n", "n_inpainted", "n_authentic", "mean_iou", "accuracy", "det_auc", "loc_auc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub n: usize,
    pub n_inpainted: usize,
    pub n_authentic: usize,
    pub mean_iou: f64,
    pub accuracy: f64,
    pub det_auc: f64,
    pub loc_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub manifest_sha256: String,
    pub detector_id: String,
    pub grouping: Vec<String>,
    pub options: EvalOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub meta: ReportMeta,
}

/// Six decimals; NaN (undefined metric) is empty and infinities are `inf`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ReportRow {
    pub(crate) fn csv_cells(&self) -> Vec<String> {
        vec![
            csv_field(&self.group),
            self.n.to_string(),
            self.n_inpainted.to_string(),
            self.n_authentic.to_string(),
            format_float(self.mean_iou),
            format_float(self.accuracy),
            format_float(self.det_auc),
            format_float(self.loc_auc),
        ]
    }
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.csv_cells().join(","));
        }
        out
    }
}

pub(crate) fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Writes the CSV and a `.json` sidecar with the run metadata.
pub fn write_report(report: &MetricReport, csv_path: impl AsRef<Path>) -> Result<(), EvalError> {
    let csv_path = csv_path.as_ref();
    write_text(csv_path, &report.to_csv())?;
    let meta = serde_json::to_string_pretty(&report.meta).expect("metadata serializes");
    write_text(&sidecar_path(csv_path), &(meta + "\n"))
}
