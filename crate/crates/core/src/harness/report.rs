use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::RunReport;
use crate::error::{Error, Result};

/// One line of `results.csv`. Aggregate lines carry `mean` or `std` in the
/// seed column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub strategy: String,
    pub seed: String,
    pub metric: String,
    pub value: String,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn rows(report: &RunReport) -> Vec<CsvRow> {
    let mut out = Vec::new();
    for s in &report.strategies {
        for e in &s.seeds {
            for (metric, v) in e.result.headline(report.binary) {
                out.push(CsvRow {
                    strategy: s.strategy.clone(),
                    seed: e.seed.to_string(),
                    metric: metric.to_string(),
                    value: fmt(v),
                });
            }
        }
        for a in &s.aggregates {
            for (tag, v) in [("mean", a.mean), ("std", a.std)] {
                out.push(CsvRow {
                    strategy: s.strategy.clone(),
                    seed: tag.to_string(),
                    metric: a.metric.clone(),
                    value: fmt(v),
                });
            }
        }
    }
    out
}

/// Writes `results.csv` and `report.json` into `dir` and returns their paths.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
    w.write_record(["strategy", "seed", "metric", "value"])?;
    for r in rows(report) {
        w.serialize(r)?;
    }
    w.flush()?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    Ok((csv_path, json_path))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
