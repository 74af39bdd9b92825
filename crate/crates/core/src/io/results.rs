use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One aggregate: `value ± stderr` of `metric` for `policy` after `n` steps.
/// Rows describing the stopping time use `n = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub policy: String,
    pub n: usize,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, policy: &str, n: usize, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.policy == policy && r.n == n && r.metric == metric)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Ten significant digits, shortest form.
fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.9e}").parse().expect("formatted float parses");
    rounded.to_string()
}

pub fn results_to_csv(table: &MetricsTable) -> Result<String> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("refusing to write an empty results table".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["policy", "n", "metric", "value", "stderr"]).map_err(io)?;
    for r in &table.rows {
        w.write_record([
            r.policy.clone(),
            r.n.to_string(),
            r.metric.clone(),
            format_number(r.value),
            format_number(r.stderr),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes the table as CSV; an empty table is an error and creates no file.
pub fn write_results(table: &MetricsTable, path: impl AsRef<Path>) -> Result<()> {
    let text = results_to_csv(table)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<MetricsTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let rows = rdr
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<MetricRow>>>()?;
    Ok(MetricsTable { rows })
}
