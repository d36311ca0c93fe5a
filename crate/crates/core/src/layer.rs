//! One Gaussian layer: factorization (dense or Vecchia) and kriging.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gauss::{self, CholFactor, Covariance};
use crate::kernel::{cov_matrix, cross_matrix, deriv_set, Points};
use crate::vecchia::{stack_rows, SparseUFactor, VecchiaPlan, VecchiaPredictor};

/// A zero-mean GP layer over `points` whose observation vector is block-stacked
/// responses (and partials when `with_grad`).
#[derive(Clone, Copy)]
pub(crate) struct Layer<'a> {
    pub points: &'a Points,
    pub with_grad: bool,
    pub theta: &'a [f64],
    pub eps: f64,
    pub plan: Option<&'a VecchiaPlan>,
}

pub(crate) enum LayerFactor {
    Dense(CholFactor),
    Vecchia(SparseUFactor),
}

impl Layer<'_> {
    pub fn size(&self) -> usize {
        let blocks = if self.with_grad { 1 + self.points.dim() } else { 1 };
        self.points.len() * blocks
    }

    pub fn factor(&self) -> Result<LayerFactor> {
        match self.plan {
            None => {
                let k = cov_matrix(self.points, self.theta, self.with_grad, self.eps);
                Ok(LayerFactor::Dense(gauss::factor(k)?))
            }
            Some(plan) => Ok(LayerFactor::Vecchia(SparseUFactor::build(
                plan,
                self.points,
                self.theta,
                self.eps,
            )?)),
        }
    }
}

impl LayerFactor {
    pub fn loglik_profiled(&self, plan: Option<&VecchiaPlan>, y: &DVector<f64>) -> Result<f64> {
        match (self, plan) {
            (LayerFactor::Dense(c), _) => gauss::loglik_profiled(c, y),
            (LayerFactor::Vecchia(f), Some(p)) => f.loglik_profiled(p, y),
            (LayerFactor::Vecchia(_), None) => Err(missing_plan()),
        }
    }

    pub fn log_density(&self, plan: Option<&VecchiaPlan>, y: &DVector<f64>) -> Result<f64> {
        match (self, plan) {
            (LayerFactor::Dense(c), _) => gauss::log_density(c, y),
            (LayerFactor::Vecchia(f), Some(p)) => f.log_density(p, y),
            (LayerFactor::Vecchia(_), None) => Err(missing_plan()),
        }
    }

    pub fn tau2_hat(&self, plan: Option<&VecchiaPlan>, y: &DVector<f64>) -> Result<f64> {
        match (self, plan) {
            (LayerFactor::Dense(c), _) => gauss::tau2_hat(c, y),
            (LayerFactor::Vecchia(f), Some(p)) => f.tau2_hat(p, y),
            (LayerFactor::Vecchia(_), None) => Err(missing_plan()),
        }
    }

    /// Zero-mean prior draw.
    pub fn sample<R: Rng + ?Sized>(&self, plan: Option<&VecchiaPlan>, rng: &mut R) -> DVector<f64> {
        match (self, plan) {
            (LayerFactor::Dense(c), _) => gauss::mvn_sample(&DVector::zeros(c.dim()), c, rng),
            (LayerFactor::Vecchia(f), Some(p)) => f.sample(p, rng),
            (LayerFactor::Vecchia(_), None) => unreachable!("vecchia factor without plan"),
        }
    }
}

fn missing_plan() -> Error {
    Error::InvalidParameter("vecchia factor used without its plan".into())
}

/// Which predictive covariance to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CovMode {
    MeanOnly,
    Diag,
    Full,
}

/// Scale applied to predictive covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Scale {
    /// Plug in `y^T K^{-1} y / N`.
    Profiled,
    Fixed(f64),
}

pub(crate) struct Prediction {
    /// Block-stacked over the predictive locations.
    pub mean: DVector<f64>,
    pub cov: Option<Covariance>,
}

/// Kriging from a layer's observations to `xp`, predicting responses and,
/// when `want_grad`, all partials.
pub(crate) fn krige(
    layer: &Layer<'_>,
    values: &DVector<f64>,
    xp: &Points,
    want_grad: bool,
    mode: CovMode,
    scale: Scale,
) -> Result<Prediction> {
    if values.len() != layer.size() {
        return Err(Error::DimensionMismatch {
            context: "kriging training values",
            expected: layer.size(),
            found: values.len(),
        });
    }
    match layer.plan {
        None => krige_dense(layer, values, xp, want_grad, mode, scale),
        Some(plan) => {
            if mode == CovMode::Full {
                return Err(Error::InvalidParameter(
                    "full predictive covariance is not available with Vecchia".into(),
                ));
            }
            let tau2 = match scale {
                Scale::Fixed(t) => t,
                Scale::Profiled => match layer.factor()? {
                    f @ LayerFactor::Vecchia(_) => f.tau2_hat(Some(plan), values)?,
                    LayerFactor::Dense(_) => unreachable!(),
                },
            };
            let predictor = VecchiaPredictor {
                plan,
                points: layer.points,
                values,
                theta: layer.theta,
                eps: layer.eps,
                tau2,
            };
            let stacked = stack_rows(&predictor.predict(xp, want_grad)?);
            Ok(Prediction {
                mean: stacked.mean,
                cov: (mode != CovMode::MeanOnly).then_some(stacked.cov),
            })
        }
    }
}

fn krige_dense(
    layer: &Layer<'_>,
    values: &DVector<f64>,
    xp: &Points,
    want_grad: bool,
    mode: CovMode,
    scale: Scale,
) -> Result<Prediction> {
    let chol = match layer.factor()? {
        LayerFactor::Dense(c) => c,
        LayerFactor::Vecchia(_) => unreachable!(),
    };
    let rows = deriv_set(xp.dim(), want_grad);
    let cols = deriv_set(layer.points.dim(), layer.with_grad);
    let kpt = cross_matrix(xp, layer.points, layer.theta, &rows, &cols);
    if mode == CovMode::MeanOnly {
        return Ok(Prediction {
            mean: gauss::condition_mean(&kpt, &chol, values),
            cov: None,
        });
    }
    let tau2 = match scale {
        Scale::Fixed(t) => t,
        Scale::Profiled => gauss::tau2_hat(&chol, values)?,
    };
    let res = match mode {
        CovMode::Full => {
            let kpp = cov_matrix(xp, layer.theta, want_grad, 0.0);
            gauss::mvn_condition(&kpp, &kpt, &chol, values, tau2)?
        }
        _ => {
            let diag = DVector::from_vec(crate::kernel::prior_diag(xp.len(), layer.theta, want_grad));
            gauss::mvn_condition_lite(&diag, &kpt, &chol, values, tau2)?
        }
    };
    Ok(Prediction {
        mean: res.mean,
        cov: Some(res.cov),
    })
}

/// Joint draw from `N(mean, cov)`; a tiny diagonal inflation absorbs round-off
/// in nearly singular posterior covariances.
pub(crate) fn draw_joint<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let scale = cov.diagonal().amax().max(1e-300);
    let chol = gauss::chol_jitter(cov, 1e-10 * scale)?;
    Ok(gauss::mvn_sample(mean, &chol, rng))
}
