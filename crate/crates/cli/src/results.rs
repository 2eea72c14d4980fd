//! Long-format result tables. Metric values go to the main CSV and wall
//! times to a `.timing.csv` sidecar with the same keys, so reruns with the
//! same seed reproduce the main file byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

pub const RESULT_HEADER: &str = "value,trial,metric,metric_value";
pub const TIMING_HEADER: &str = "value,trial,metric,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    /// Value of the swept quantity.
    pub value: f64,
    pub trial: usize,
    pub metric: String,
    pub metric_value: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn push(&mut self, value: f64, trial: usize, metric: &str, metric_value: f64, wall_ms: f64) {
        self.rows.push(ResultRow {
            value,
            trial,
            metric: metric.to_string(),
            metric_value,
            wall_ms,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{RESULT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.value, r.trial, r.metric, r.metric_value);
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = format!("{TIMING_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.3}", r.value, r.trial, r.metric, r.wall_ms);
        }
        s
    }

    /// Rows of `metric`, in insertion order.
    pub fn metric<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }
}

/// `dir/stem.csv` -> `dir/stem.<suffix>`.
pub fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
