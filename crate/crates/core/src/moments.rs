//! Posterior moments and their aggregation over retained MCMC iterations.

use nalgebra::{DMatrix, DVector, DVectorView};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A request for posterior predictions at `xp`.
#[derive(Debug, Clone)]
pub struct PredictRequest {
    pub xp: DMatrix<f64>,
    pub want_gradient: bool,
    /// Diagonal-only covariance.
    pub lite: bool,
    /// Number of joint posterior draws to return, spread evenly over retained iterations.
    pub joint_samples: Option<usize>,
    /// Seed for joint draws and sampled warpings.
    pub seed: u64,
}

impl PredictRequest {
    pub fn new(xp: DMatrix<f64>) -> Self {
        PredictRequest {
            xp,
            want_gradient: false,
            lite: true,
            joint_samples: None,
            seed: 0,
        }
    }

    pub fn with_gradient(mut self, on: bool) -> Self {
        self.want_gradient = on;
        self
    }

    pub fn full_covariance(mut self) -> Self {
        self.lite = false;
        self
    }

    pub fn with_samples(mut self, count: usize, seed: u64) -> Self {
        self.joint_samples = Some(count);
        self.seed = seed;
        self
    }

    pub fn n_p(&self) -> usize {
        self.xp.nrows()
    }

    /// `n_p` or `n_p (1 + D)`.
    pub fn total(&self) -> usize {
        if self.want_gradient {
            self.n_p() * (1 + self.xp.ncols())
        } else {
            self.n_p()
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        if self.n_p() == 0 {
            return Err(Error::InvalidParameter("no predictive locations".into()));
        }
        if self.xp.ncols() != dim {
            return Err(Error::DimensionMismatch {
                context: "predictive locations",
                expected: dim,
                found: self.xp.ncols(),
            });
        }
        Ok(())
    }
}

/// Posterior moments over block-stacked targets `[y; dy/dx1; ...; dy/dxD]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub n_p: usize,
    pub dim: usize,
    pub with_gradient: bool,
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub cov: Option<DMatrix<f64>>,
    /// Joint draws, one per row.
    pub samples: Option<DMatrix<f64>>,
}

impl PosteriorMoments {
    pub fn y_mean(&self) -> DVectorView<'_, f64> {
        self.mean.rows(0, self.n_p)
    }

    pub fn y_var(&self) -> DVectorView<'_, f64> {
        self.var.rows(0, self.n_p)
    }

    /// Mean of `dy/dx^d`, `d` in `1..=D`.
    pub fn grad_mean(&self, d: usize) -> Option<DVectorView<'_, f64>> {
        (self.with_gradient && (1..=self.dim).contains(&d))
            .then(|| self.mean.rows(d * self.n_p, self.n_p))
    }

    pub fn grad_var(&self, d: usize) -> Option<DVectorView<'_, f64>> {
        (self.with_gradient && (1..=self.dim).contains(&d))
            .then(|| self.var.rows(d * self.n_p, self.n_p))
    }
}

/// Law of total expectation and variance over iterations: the mean of the
/// per-iteration means, and the mean of the variances plus the (population)
/// variance of the means.
pub fn aggregate_moments(per_t: &[(DVector<f64>, DVector<f64>)]) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut acc = MomentAccumulator::new(false);
    for (m, v) in per_t {
        acc.push(m, v, None)?;
    }
    let (mean, var, _) = acc.finish()?;
    Ok((mean, var))
}

/// Streaming version of [`aggregate_moments`], optionally tracking full covariances.
pub(crate) struct MomentAccumulator {
    count: usize,
    mean: Option<DVector<f64>>,
    m2: Option<DVector<f64>>,
    var_sum: Option<DVector<f64>>,
    full: bool,
    cov_sum: Option<DMatrix<f64>>,
    m2_full: Option<DMatrix<f64>>,
}

impl MomentAccumulator {
    pub fn new(full: bool) -> Self {
        MomentAccumulator {
            count: 0,
            mean: None,
            m2: None,
            var_sum: None,
            full,
            cov_sum: None,
            m2_full: None,
        }
    }

    pub fn push(&mut self, mean: &DVector<f64>, var: &DVector<f64>, cov: Option<&DMatrix<f64>>) -> Result<()> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                context: "moment aggregation",
                expected: mean.len(),
                found: var.len(),
            });
        }
        self.count += 1;
        let k = self.count as f64;
        match (&mut self.mean, &mut self.m2, &mut self.var_sum) {
            (Some(mu), Some(m2), Some(vs)) => {
                if mu.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        context: "moment aggregation",
                        expected: mu.len(),
                        found: mean.len(),
                    });
                }
                let delta = mean - &*mu;
                *mu += &delta / k;
                let delta2 = mean - &*mu;
                *m2 += delta.component_mul(&delta2);
                *vs += var;
                if self.full {
                    let c = cov.ok_or_else(|| Error::InvalidParameter("missing covariance".into()))?;
                    *self.cov_sum.as_mut().unwrap() += c;
                    *self.m2_full.as_mut().unwrap() += &delta * delta2.transpose();
                }
            }
            _ => {
                self.mean = Some(mean.clone());
                self.m2 = Some(DVector::zeros(mean.len()));
                self.var_sum = Some(var.clone());
                if self.full {
                    let c = cov.ok_or_else(|| Error::InvalidParameter("missing covariance".into()))?;
                    self.cov_sum = Some(c.clone());
                    self.m2_full = Some(DMatrix::zeros(mean.len(), mean.len()));
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(DVector<f64>, DVector<f64>, Option<DMatrix<f64>>)> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("no retained iterations to aggregate".into()));
        }
        let t = self.count as f64;
        let mean = self.mean.unwrap();
        let var = self.var_sum.unwrap() / t + self.m2.unwrap() / t;
        let cov = match (self.cov_sum, self.m2_full) {
            (Some(c), Some(m2)) => {
                let full = c / t + m2 / t;
                Some((&full + full.transpose()) * 0.5)
            }
            _ => None,
        };
        Ok((mean, var, cov))
    }
}

/// Moments (and optional joint draws) at a single retained iteration.
pub(crate) struct PerIteration {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    pub cov: Option<DMatrix<f64>>,
    pub samples: Vec<DVector<f64>>,
}

/// Evaluates `f` at every retained iteration (in parallel, in fixed-size
/// chunks) and folds the results in iteration order.
pub(crate) fn collect_over_iterations<F>(
    count: usize,
    full: bool,
    n_p: usize,
    dim: usize,
    with_gradient: bool,
    f: F,
) -> Result<PosteriorMoments>
where
    F: Fn(usize) -> Result<PerIteration> + Sync,
{
    const CHUNK: usize = 32;
    let mut acc = MomentAccumulator::new(full);
    let mut samples: Vec<DVector<f64>> = Vec::new();
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk: Vec<Result<PerIteration>> = (start..end).into_par_iter().map(&f).collect();
        for r in chunk {
            let r = r?;
            acc.push(&r.mean, &r.var, r.cov.as_ref())?;
            samples.extend(r.samples);
        }
        start = end;
    }
    let (mean, var, cov) = acc.finish()?;
    let samples = (!samples.is_empty()).then(|| {
        let cols = samples[0].len();
        DMatrix::from_fn(samples.len(), cols, |i, j| samples[i][j])
    });
    Ok(PosteriorMoments {
        n_p,
        dim,
        with_gradient,
        mean,
        var,
        cov: if full { cov } else { None },
        samples,
    })
}

/// How many of `total` joint draws fall on retained iteration `t` of `count`.
pub(crate) fn draws_for(t: usize, count: usize, total: usize) -> usize {
    total / count + usize::from(t < total % count)
}
