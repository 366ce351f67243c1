//! Flat-file persistence: long-format CSV or JSON, each with a manifest.

use std::path::{Path, PathBuf};

use crate::config::OutputFormat;
use crate::error::{HarnessError, Result};
use crate::experiment::AggregateResult;

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "results.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_HEADER: [&str; 5] = ["config_id", "seed", "t", "metric", "value"];

/// Writes the result into directory `dir` and returns the files written.
pub fn export(result: &AggregateResult, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    write_file(&manifest_path, &serde_json::to_vec_pretty(&result.manifest)?)?;
    let data_path = match format {
        OutputFormat::Csv => {
            let path = dir.join(CSV_FILE);
            write_file(&path, &csv_bytes(result)?)?;
            path
        }
        OutputFormat::Json => {
            let path = dir.join(JSON_FILE);
            write_file(&path, &serde_json::to_vec_pretty(result)?)?;
            path
        }
    };
    Ok(vec![manifest_path, data_path])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// One row per (point, seed, iteration, metric) of every successful run,
/// ordered by `config_id`, seed, `t`, then metric name. Undefined values are
/// left empty.
pub fn csv_bytes(result: &AggregateResult) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for point in &result.points {
        for run in point.runs.iter().filter(|r| r.error.is_none()) {
            for (i, t) in run.t.iter().enumerate() {
                for (metric, values) in &run.series {
                    let value = values
                        .get(i)
                        .copied()
                        .flatten()
                        .map(|v| v.to_string())
                        .unwrap_or_default();
                    writer.write_record([
                        run.config_id.to_string(),
                        run.seed.to_string(),
                        t.to_string(),
                        metric.clone(),
                        value,
                    ])?;
                }
            }
        }
    }
    writer
        .into_inner()
        .map_err(|e| HarnessError::Config(format!("csv buffer: {e}")))
}

pub fn load_json(path: &Path) -> Result<AggregateResult> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
