use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::json;

use super::MetricsRecord;
use crate::error::{CoadError, Result};

pub const CSV_HEADER: &str = "replication,group,n,m,coverage,threshold,coad_revenue,second_price_revenue,welfare,h_hat,bound_value,mse";

/// `git describe` of the source tree, or `"unknown"` outside a checkout.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>_summary.json`.
pub fn write_outputs(record: &MetricsRecord, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| CoadError::io(dir, e))?;
    let name = record.experiment.as_str();
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}_summary.json"));

    let file = fs::File::create(&csv_path).map_err(|e| CoadError::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &record.rows {
        w.serialize(row)?;
    }
    if record.rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush().map_err(|e| CoadError::io(&csv_path, e))?;

    let summary = json!({
        "experiment": name,
        "seed": record.config.seed,
        "git_describe": git_describe(),
        "config": record.config,
        "replications": record.config.replications,
        "rows": record.rows.len(),
        "invariant_violations": record.invariant_violations,
        "summary": record.summary,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&json_path, text + "\n").map_err(|e| CoadError::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
