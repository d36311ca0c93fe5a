//! Fitting from and predicting to CSV files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use gradgp::chainfile::{read_chain, write_chain, ChainFile, InputScale};
use gradgp::{fit_model, Chain, FitSettings, ModelKind, PredictRequest, TrainingSet};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CliError, Result};

/// Columns `x1..xD`, `y` and optional `dy_dx1..dy_dxD`.
pub struct CsvData {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub grad: Option<DMatrix<f64>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Reads a data CSV. When `need_grad`, all gradient columns must be present.
pub fn read_data_csv(path: &Path, need_y: bool, need_grad: bool) -> Result<CsvData> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut xcols = Vec::new();
    while let Some(c) = column(&headers, &format!("x{}", xcols.len() + 1)) {
        xcols.push(c);
    }
    if xcols.is_empty() {
        return Err(CliError::Input(format!("{}: no input columns x1, x2, ...", path.display())));
    }
    let dim = xcols.len();
    let ycol = column(&headers, "y");
    if need_y && ycol.is_none() {
        return Err(CliError::Input(format!("{}: missing response column 'y'", path.display())));
    }
    let gcols: Vec<Option<usize>> = (1..=dim).map(|d| column(&headers, &format!("dy_dx{d}"))).collect();
    if need_grad {
        if let Some(d) = gcols.iter().position(Option::is_none) {
            return Err(CliError::Input(format!(
                "{}: missing gradient column 'dy_dx{}' required by gradient-enhanced models",
                path.display(),
                d + 1
            )));
        }
    }
    let have_grad = gcols.iter().all(Option::is_some);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut gs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> {
            let s = rec.get(c).unwrap_or("").trim();
            s.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {}, column '{}': cannot parse '{s}'",
                    path.display(),
                    i + 1,
                    &headers[c]
                ))
            })
        };
        for &c in &xcols {
            xs.push(get(c)?);
        }
        if let Some(c) = ycol {
            ys.push(get(c)?);
        }
        if have_grad {
            for c in gcols.iter().flatten() {
                gs.push(get(*c)?);
            }
        }
    }
    let n = xs.len() / dim;
    if n == 0 {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(CsvData {
        x: DMatrix::from_row_slice(n, dim, &xs),
        y: ycol.map(|_| DVector::from_vec(ys)),
        grad: have_grad.then(|| DMatrix::from_row_slice(n, dim, &gs)),
    })
}

/// Fits `model` to a data CSV (inputs rescaled to the unit cube) and writes the chain.
pub fn fit_file(data_path: &Path, model: ModelKind, settings: &FitSettings, seed: u64, chain_path: &Path) -> Result<Chain> {
    let data = read_data_csv(data_path, true, model.gradient_enhanced())?;
    let scale = InputScale::fit(&data.x);
    let x = scale.to_unit(&data.x)?;
    let grad = data.grad.as_ref().map(|g| scale.grad_to_unit(g)).transpose()?;
    let train = TrainingSet::new(x, data.y.expect("response column checked"), grad)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let chain = fit_model(model, &train, settings, &mut rng)?;
    let mut out = BufWriter::new(File::create(chain_path)?);
    write_chain(&mut out, &chain, Some(&scale))?;
    Ok(chain)
}

pub fn load_chain(path: &Path) -> Result<ChainFile> {
    Ok(read_chain(BufReader::new(File::open(path)?))?)
}

/// Predictions on the original input scale, one row per input row:
/// `mean_y, var_y` then `mean_dy_dx{d}, var_dy_dx{d}`.
pub struct PredictionTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn predict_table(cf: &ChainFile, xp: &DMatrix<f64>, want_gradient: bool) -> Result<PredictionTable> {
    let dim = cf.chain.data().dim();
    if xp.ncols() != dim {
        return Err(CliError::Model(gradgp::Error::DimensionMismatch {
            context: "prediction inputs",
            expected: dim,
            found: xp.ncols(),
        }));
    }
    let u = match &cf.input_scale {
        Some(s) => s.to_unit(xp)?,
        None => xp.clone(),
    };
    let req = PredictRequest::new(u).with_gradient(want_gradient);
    let p = cf.chain.predict(&req)?;
    let n_p = xp.nrows();
    let mut header = vec!["mean_y".to_string(), "var_y".to_string()];
    if want_gradient {
        for d in 1..=dim {
            header.push(format!("mean_dy_dx{d}"));
            header.push(format!("var_dy_dx{d}"));
        }
    }
    let slope = |d: usize| cf.input_scale.as_ref().map_or(1.0, |s| s.width(d - 1));
    let rows = (0..n_p)
        .map(|j| {
            let mut row = vec![p.mean[j], p.var[j]];
            if want_gradient {
                for d in 1..=dim {
                    let w = slope(d);
                    row.push(p.mean[d * n_p + j] / w);
                    row.push(p.var[d * n_p + j] / (w * w));
                }
            }
            row
        })
        .collect();
    Ok(PredictionTable { header, rows })
}

pub fn write_table<W: Write>(out: W, table: &PredictionTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for r in &table.rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a chain, predicts at the inputs of `xp_path` and writes CSV to `out`.
pub fn predict_file<W: Write>(chain_path: &Path, xp_path: &Path, want_gradient: bool, out: W) -> Result<PredictionTable> {
    let cf = load_chain(chain_path)?;
    let data = read_data_csv(xp_path, false, false)?;
    let table = predict_table(&cf, &data.x, want_gradient)?;
    write_table(out, &table)?;
    Ok(table)
}
