//! Chain persistence as JSON lines: a header, one record per retained
//! iteration in order, then the final state for warm restarts.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::dgp::{DgpChain, DgpSample, LatentState};
use crate::error::{Error, Result};
use crate::gp::GpChain;
use crate::model::{Chain, ModelKind};
use crate::settings::FitSettings;
use crate::vecchia::VecchiaPlan;

pub const FORMAT: &str = "gradgp-chain";
pub const VERSION: u32 = 1;

/// Affine map from original inputs to the unit cube, `u = (x - lower) / (upper - lower)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScale {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputScale {
    /// Column ranges of `x`; constant columns get unit width.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let mut lower = Vec::with_capacity(x.ncols());
        let mut upper = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let lo = c.min();
            let hi = c.max();
            lower.push(lo);
            upper.push(if hi > lo { hi } else { lo + 1.0 });
        }
        InputScale { lower, upper }
    }

    pub fn width(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn to_unit(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, d| (x[(i, d)] - self.lower[d]) / self.width(d)))
    }

    /// Gradients with respect to original inputs, converted to unit-cube gradients.
    pub fn grad_to_unit(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(g.ncols())?;
        Ok(DMatrix::from_fn(g.nrows(), g.ncols(), |i, d| g[(i, d)] * self.width(d)))
    }

    /// Slope dividing unit-cube gradients in dimension `d`.
    pub fn grad_from_unit(&self, d: usize, g: f64) -> f64 {
        g / self.width(d)
    }

    fn check(&self, dim: usize) -> Result<()> {
        if dim != self.lower.len() {
            return Err(Error::DimensionMismatch {
                context: "input scaling",
                expected: self.lower.len(),
                found: dim,
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: ModelKind,
    n: usize,
    dim: usize,
    gradient_enhanced: bool,
    retained: usize,
    settings: FitSettings,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    grad: Option<Vec<Vec<f64>>>,
    plan: Option<VecchiaPlan>,
    input_scale: Option<InputScale>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    theta_w: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    theta_y: Option<f64>,
    /// Latent matrix in column-major order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    w: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Final {
    #[serde(rename = "final")]
    last: Record,
}

/// A chain read back from disk.
#[derive(Debug, Clone)]
pub struct ChainFile {
    pub chain: Chain,
    pub input_scale: Option<InputScale>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::ChainFormat(format!("ragged {what} rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

fn json_line<W: Write, T: Serialize>(out: &mut W, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, v).map_err(|e| Error::ChainFormat(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn gp_record(t: usize, theta: &[f64]) -> Record {
    Record {
        t,
        theta: Some(theta.to_vec()),
        theta_w: None,
        theta_y: None,
        w: None,
    }
}

fn dgp_record(t: usize, s: &DgpSample) -> Record {
    Record {
        t,
        theta: None,
        theta_w: Some(s.theta_w.clone()),
        theta_y: Some(s.theta_y),
        w: Some(s.state.w.as_slice().to_vec()),
    }
}

pub fn write_chain<W: Write>(out: &mut W, chain: &Chain, input_scale: Option<&InputScale>) -> Result<()> {
    let data = chain.data();
    let (plan, ge) = match chain {
        Chain::Shallow(c) => (c.plan().cloned(), c.gradient_enhanced()),
        Chain::Deep(c) => (c.plan().cloned(), c.gradient_enhanced()),
    };
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        model: chain.kind(),
        n: data.n(),
        dim: data.dim(),
        gradient_enhanced: ge,
        retained: chain.retained(),
        settings: chain.settings().clone(),
        x: rows(&data.x),
        y: data.y.iter().copied().collect(),
        grad: data.grad.as_ref().map(rows),
        plan,
        input_scale: input_scale.cloned(),
    };
    json_line(out, &header)?;
    match chain {
        Chain::Shallow(c) => {
            for (t, th) in c.thetas().iter().enumerate() {
                json_line(out, &gp_record(t, th))?;
            }
            json_line(out, &Final { last: gp_record(c.retained(), c.last_theta()) })?;
        }
        Chain::Deep(c) => {
            for (t, s) in c.samples().iter().enumerate() {
                json_line(out, &dgp_record(t, s))?;
            }
            json_line(out, &Final { last: dgp_record(c.retained(), c.last()) })?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_chain<R: BufRead>(input: R) -> Result<ChainFile> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::ChainFormat("empty chain file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::ChainFormat(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::ChainFormat(format!("unexpected format '{}'", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::ChainFormat(format!("unsupported version {}", header.version)));
    }
    if header.model.gradient_enhanced() != header.gradient_enhanced {
        return Err(Error::ChainFormat("model and gradient flag disagree".into()));
    }
    let dim = header.dim;
    let x = from_rows(&header.x, dim, "x")?;
    let grad = header.grad.as_deref().map(|g| from_rows(g, dim, "gradient")).transpose()?;
    let data = TrainingSet::new(x, DVector::from_vec(header.y), grad)?;
    if data.n() != header.n {
        return Err(Error::ChainFormat("row count disagrees with header".into()));
    }

    let mut records = Vec::with_capacity(header.retained);
    let mut last = None;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if last.is_some() {
            return Err(Error::ChainFormat("records after the final state".into()));
        }
        if line.starts_with("{\"final\"") {
            let f: Final = serde_json::from_str(&line).map_err(|e| Error::ChainFormat(format!("final state: {e}")))?;
            last = Some(f.last);
        } else {
            let r: Record = serde_json::from_str(&line).map_err(|e| Error::ChainFormat(format!("record: {e}")))?;
            if r.t != records.len() {
                return Err(Error::ChainFormat(format!("record {} out of order", r.t)));
            }
            records.push(r);
        }
    }
    if records.len() != header.retained {
        return Err(Error::ChainFormat(format!(
            "expected {} records, found {}",
            header.retained,
            records.len()
        )));
    }
    let last = last.ok_or_else(|| Error::ChainFormat("missing final state".into()))?;
    let ge = header.gradient_enhanced;

    let chain = if header.model.is_deep() {
        let n = data.n();
        let nrows = if ge { n * (1 + dim) } else { n };
        let sample = |r: Record| -> Result<DgpSample> {
            let (Some(theta_w), Some(theta_y), Some(w)) = (r.theta_w, r.theta_y, r.w) else {
                return Err(Error::ChainFormat(format!("record {} lacks latent fields", r.t)));
            };
            if w.len() != nrows * dim {
                return Err(Error::ChainFormat(format!("record {} has a latent matrix of wrong size", r.t)));
            }
            Ok(DgpSample {
                state: LatentState {
                    n,
                    w: DMatrix::from_vec(nrows, dim, w),
                    y_all: None,
                },
                theta_w,
                theta_y,
            })
        };
        let samples = records.into_iter().map(sample).collect::<Result<Vec<_>>>()?;
        let last = sample(last)?;
        Chain::Deep(DgpChain::from_samples(data, ge, header.settings, samples, Some(last), header.plan)?)
    } else {
        let theta = |r: Record| -> Result<Vec<f64>> {
            r.theta
                .ok_or_else(|| Error::ChainFormat(format!("record {} lacks lengthscales", r.t)))
        };
        let thetas = records.into_iter().map(theta).collect::<Result<Vec<_>>>()?;
        let last = theta(last)?;
        Chain::Shallow(GpChain::from_parts(data, ge, header.settings, thetas, last, header.plan, Vec::new())?)
    };
    Ok(ChainFile {
        chain,
        input_scale: header.input_scale,
    })
}
