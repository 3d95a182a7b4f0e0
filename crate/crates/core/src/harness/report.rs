use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{Aggregate, RunManifest};
use crate::metrics::CLASSIFICATION_METRICS;

/// Metric columns of the report table, in order.
pub const REPORT_COLUMNS: [&str; 8] = ["accuracy", "auroc", "auprc", "es", "mae", "mse", "rmse", "osmae"];

/// `mean ± std` to two decimals; classification metrics are scaled by 100.
pub fn format_cell(metric: &str, agg: &Aggregate) -> String {
    let scale = if CLASSIFICATION_METRICS.contains(&metric) { 100.0 } else { 1.0 };
    format!("{:.2} ± {:.2}", agg.mean * scale, agg.std * scale)
}

/// CSV with one row per predictor and one column per metric.
pub fn report_table(manifest: &RunManifest) -> Result<String> {
    if manifest.iterations.is_empty() || manifest.aggregate.is_empty() {
        return Err(Error::Report("manifest holds no per-iteration reports".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["predictor".to_string(), "iterations".to_string()];
    header.extend(REPORT_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (label, metrics) in &manifest.aggregate {
        let mut row = vec![label.clone(), manifest.iterations.len().to_string()];
        row.extend(
            REPORT_COLUMNS
                .iter()
                .map(|m| metrics.get(*m).map(|a| format_cell(m, a)).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Writes `report.csv` and `report.json` into `out`.
pub fn write_report(manifest: &RunManifest, out: &Path) -> Result<()> {
    let table = report_table(manifest)?;
    let csv_path = out.join("report.csv");
    std::fs::write(&csv_path, table).map_err(|e| Error::io(&csv_path, e))?;
    let dump = serde_json::json!({
        "task": manifest.config.task,
        "gamma": manifest.config.metrics.gamma,
        "e_scope": manifest.config.metrics.e_scope,
        "std": "population",
        "scaled_by_100": CLASSIFICATION_METRICS,
        "iterations": manifest.iterations.len(),
        "aggregate": manifest.aggregate,
    });
    let json_path = out.join("report.json");
    let mut bytes = serde_json::to_vec_pretty(&dump)?;
    bytes.push(b'\n');
    std::fs::write(&json_path, bytes).map_err(|e| Error::io(&json_path, e))
}
