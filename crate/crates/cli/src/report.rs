//! Merging per-run reports into one table.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::pipeline::{format_table, read_csv, CsvRow, Timing, METHODS, REPORT_CSV, TIMING_CSV};

/// A report row with the stage timings of its run.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub row: CsvRow,
    pub t_s_i: Option<f64>,
    pub t_estimate: Option<f64>,
    pub t_correct: Option<f64>,
}

pub struct Merged {
    pub rows: Vec<CsvRow>,
    pub timings: Vec<Timing>,
}

fn method_rank(m: &str) -> usize {
    METHODS.iter().position(|x| *x == m).unwrap_or(METHODS.len())
}

/// Reads `report.csv` (and `timing.csv` when present) from each directory;
/// rows are sorted by config name, then by method.
pub fn merge(dirs: &[PathBuf]) -> Result<Merged> {
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for d in dirs {
        rows.extend(read_csv::<CsvRow>(&d.join(REPORT_CSV))?);
        let t = d.join(TIMING_CSV);
        if t.exists() {
            timings.extend(read_csv::<Timing>(&t)?);
        }
    }
    rows.sort_by(|a, b| a.config.cmp(&b.config).then(method_rank(&a.method).cmp(&method_rank(&b.method))));
    timings.sort_by(|a, b| a.config.cmp(&b.config));
    Ok(Merged { rows, timings })
}

impl Merged {
    pub fn merged_rows(&self) -> Vec<MergedRow> {
        self.rows
            .iter()
            .map(|r| {
                let t = self.timings.iter().find(|t| t.config == r.config);
                MergedRow {
                    row: r.clone(),
                    t_s_i: t.map(|t| t.s_i),
                    t_estimate: t.map(|t| t.estimate),
                    t_correct: t.map(|t| t.correct),
                }
            })
            .collect()
    }

    pub fn table(&self) -> String {
        format_table(&self.rows, &self.timings)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        w.write_record([
            "config",
            "method",
            "res",
            "psnr",
            "ssim",
            "mse",
            "deformation_rmse",
            "static_incompatibility",
            "t_s_i",
            "t_estimate",
            "t_correct",
        ])
        .map_err(|e| CliError::io(path, e))?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for m in self.merged_rows() {
            let r = &m.row;
            w.write_record([
                r.config.clone(),
                r.method.clone(),
                r.res.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
                r.mse.to_string(),
                opt(r.deformation_rmse),
                r.static_incompatibility.to_string(),
                opt(m.t_s_i),
                opt(m.t_estimate),
                opt(m.t_correct),
            ])
            .map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}
