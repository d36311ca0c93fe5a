//! Per-panel, log-scaled score tables for boxplots.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gradgp::ModelKind;

use crate::error::{CliError, Result};

/// One stored score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub function: String,
    pub model: ModelKind,
    pub repetition: usize,
    pub rmse_y: f64,
    pub crps_y: f64,
    pub rmse_grad: Option<f64>,
    pub crps_grad: Option<f64>,
}

pub fn read_results(path: &Path) -> Result<Vec<ScoreEntry>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", path.display())))
    };
    let (cf, cm, cr) = (col("function")?, col("model")?, col("repetition")?);
    let (c1, c2, c3, c4) = (col("rmse_y")?, col("crps_y")?, col("rmse_grad")?, col("crps_grad")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |c: usize| -> Result<Option<f64>> {
            let s = rec.get(c).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| CliError::Input(format!("cannot parse '{s}' in column '{}'", &headers[c])))
        };
        let need = |c: usize| -> Result<f64> {
            num(c)?.ok_or_else(|| CliError::Input(format!("empty value in column '{}'", &headers[c])))
        };
        out.push(ScoreEntry {
            function: rec.get(cf).unwrap_or("").to_string(),
            model: rec.get(cm).unwrap_or("").parse()?,
            repetition: rec
                .get(cr)
                .unwrap_or("")
                .parse()
                .map_err(|_| CliError::Input("bad repetition".into()))?,
            rmse_y: need(c1)?,
            crps_y: need(c2)?,
            rmse_grad: num(c3)?,
            crps_grad: num(c4)?,
        });
    }
    Ok(out)
}

/// Writes one file per (function, metric, target) into `dir`, returning the paths.
pub fn emit_plot_data(entries: &[ScoreEntry], dir: &Path) -> Result<Vec<PathBuf>> {
    if entries.is_empty() {
        return Err(CliError::Input("result table is empty".into()));
    }
    fs::create_dir_all(dir)?;
    let functions: BTreeSet<&str> = entries.iter().map(|e| e.function.as_str()).collect();
    let mut written = Vec::new();
    for f in functions {
        for metric in ["rmse", "crps"] {
            for target in ["y", "grad"] {
                let value = |e: &ScoreEntry| match (metric, target) {
                    ("rmse", "y") => Some(e.rmse_y),
                    ("crps", "y") => Some(e.crps_y),
                    ("rmse", _) => e.rmse_grad,
                    _ => e.crps_grad,
                };
                let mut rows: Vec<(ModelKind, usize, f64)> = entries
                    .iter()
                    .filter(|e| e.function == f)
                    .filter_map(|e| value(e).map(|v| (e.model, e.repetition, v)))
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                rows.sort_by_key(|&(m, r, _)| (ModelKind::ALL.iter().position(|&k| k == m), r));
                let path = dir.join(format!("{f}_{metric}_{target}.csv"));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["model", "repetition", "log_value"])?;
                for (m, r, v) in rows {
                    w.write_record([m.to_string(), r.to_string(), v.ln().to_string()])?;
                }
                w.flush()?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
