//! Shallow GP and gradient-enhanced GP with MH-sampled lengthscales.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::gauss::Covariance;
use crate::kernel::Points;
use crate::layer::{draw_joint, krige, CovMode, Layer, Scale};
use crate::mh::mh_lengthscale;
use crate::moments::{collect_over_iterations, draws_for, PerIteration, PosteriorMoments, PredictRequest};
use crate::settings::{FitSettings, McmcSettings};
use crate::vecchia::VecchiaPlan;

/// Retained lengthscale samples of a (ge)GP fit.
#[derive(Debug, Clone)]
pub struct GpChain {
    data: TrainingSet,
    gradient_enhanced: bool,
    settings: FitSettings,
    y_center: f64,
    thetas: Vec<Vec<f64>>,
    last_theta: Vec<f64>,
    plan: Option<VecchiaPlan>,
    acceptance: Vec<f64>,
    points: Points,
    values: DVector<f64>,
}

impl GpChain {
    pub(crate) fn from_parts(
        data: TrainingSet,
        gradient_enhanced: bool,
        settings: FitSettings,
        thetas: Vec<Vec<f64>>,
        last_theta: Vec<f64>,
        plan: Option<VecchiaPlan>,
        acceptance: Vec<f64>,
    ) -> Result<Self> {
        let y_center = data.y_mean();
        let values = data.stacked(y_center, gradient_enhanced)?;
        let points = Points::from_matrix(&data.x);
        let dim = data.dim();
        if last_theta.len() != dim || thetas.iter().any(|t| t.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "chain lengthscales",
                expected: dim,
                found: last_theta.len(),
            });
        }
        if thetas.iter().flatten().chain(&last_theta).any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("lengthscales must be positive".into()));
        }
        if let Some(p) = &plan {
            p.check_layout(data.n(), if gradient_enhanced { dim } else { 0 })?;
        }
        Ok(GpChain {
            data,
            gradient_enhanced,
            settings,
            y_center,
            thetas,
            last_theta,
            plan,
            acceptance,
            points,
            values,
        })
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn gradient_enhanced(&self) -> bool {
        self.gradient_enhanced
    }

    pub fn settings(&self) -> &FitSettings {
        &self.settings
    }

    /// Retained lengthscale vectors, one per retained iteration.
    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn retained(&self) -> usize {
        self.thetas.len()
    }

    /// State after the final iteration, used to continue fitting.
    pub fn last_theta(&self) -> &[f64] {
        &self.last_theta
    }

    pub fn plan(&self) -> Option<&VecchiaPlan> {
        self.plan.as_ref()
    }

    /// Per-dimension MH acceptance rates over the whole run.
    pub fn acceptance(&self) -> &[f64] {
        &self.acceptance
    }

    /// Length of the observation vector entering the likelihood.
    pub fn likelihood_size(&self) -> usize {
        self.values.len()
    }

    /// Centred, stacked observation vector used in the likelihood.
    pub fn observations(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn y_center(&self) -> f64 {
        self.y_center
    }

    /// A chain holding the given lengthscale samples, without fitting.
    pub fn from_thetas(
        data: TrainingSet,
        gradient_enhanced: bool,
        settings: FitSettings,
        thetas: Vec<Vec<f64>>,
        plan: Option<VecchiaPlan>,
    ) -> Result<Self> {
        let last = thetas
            .last()
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("chain has no samples".into()))?;
        let dim = data.dim();
        Self::from_parts(data, gradient_enhanced, settings, thetas, last, plan, vec![0.0; dim])
    }

    fn layer<'a>(&'a self, theta: &'a [f64]) -> Layer<'a> {
        Layer {
            points: &self.points,
            with_grad: self.gradient_enhanced,
            theta,
            eps: self.settings.eps,
            plan: self.plan.as_ref(),
        }
    }

    /// Profiled log-likelihood at `theta`.
    pub fn loglik(&self, theta: &[f64]) -> Result<f64> {
        let layer = self.layer(theta);
        layer.factor()?.loglik_profiled(layer.plan, &self.values)
    }

    /// Runs `mcmc` more iterations starting from the final state.
    pub fn continue_fit<R: Rng + ?Sized>(&self, mcmc: McmcSettings, rng: &mut R) -> Result<GpChain> {
        let settings = FitSettings { mcmc, ..self.settings.clone() };
        settings.validate()?;
        run(
            self.data.clone(),
            self.gradient_enhanced,
            settings,
            self.last_theta.clone(),
            self.plan.clone(),
            rng,
        )
    }

    /// Routes to the matching predictor.
    pub fn predict(&self, req: &PredictRequest) -> Result<PosteriorMoments> {
        predict_shallow(self, req)
    }
}

/// Fits a GP to responses only (gradients, if present, are ignored).
pub fn fit_gp<R: Rng + ?Sized>(data: &TrainingSet, settings: &FitSettings, rng: &mut R) -> Result<GpChain> {
    fit(data, false, settings, rng)
}

/// Fits a GP to responses and gradients.
pub fn fit_gegp<R: Rng + ?Sized>(data: &TrainingSet, settings: &FitSettings, rng: &mut R) -> Result<GpChain> {
    if !data.has_grad() {
        return Err(Error::InvalidParameter("gradient-enhanced GP requires training gradients".into()));
    }
    fit(data, true, settings, rng)
}

fn fit<R: Rng + ?Sized>(data: &TrainingSet, ge: bool, settings: &FitSettings, rng: &mut R) -> Result<GpChain> {
    settings.validate()?;
    let points = Points::from_matrix(&data.x);
    let plan = match settings.vecchia_m {
        Some(m) => Some(VecchiaPlan::build(&points, if ge { data.dim() } else { 0 }, m, rng)?),
        None => None,
    };
    let theta0 = vec![settings.theta_init; data.dim()];
    run(data.clone(), ge, settings.clone(), theta0, plan, rng)
}

fn run<R: Rng + ?Sized>(
    data: TrainingSet,
    ge: bool,
    settings: FitSettings,
    theta0: Vec<f64>,
    plan: Option<VecchiaPlan>,
    rng: &mut R,
) -> Result<GpChain> {
    let dim = data.dim();
    let mut chain = GpChain::from_parts(data, ge, settings.clone(), Vec::new(), theta0.clone(), plan, vec![0.0; dim])?;
    let mcmc = settings.mcmc;
    let mut theta = theta0;
    let mut ll = chain.loglik(&theta).map_err(|e| e.at_iteration(0))?;
    let mut accepted = vec![0usize; dim];
    let mut thetas = Vec::with_capacity(mcmc.retained());
    for iter in 1..=mcmc.nmcmc {
        for d in 0..dim {
            let mut trial = theta.clone();
            let step = mh_lengthscale(
                theta[d],
                ll,
                |t| {
                    trial[d] = t;
                    chain.loglik(&trial).ok()
                },
                &settings.theta_prior,
                &settings.window,
                rng,
            );
            theta[d] = step.theta;
            ll = step.loglik;
            accepted[d] += usize::from(step.accepted);
        }
        if mcmc.keeps(iter) {
            thetas.push(theta.clone());
        }
    }
    chain.thetas = thetas;
    chain.last_theta = theta;
    chain.acceptance = accepted.iter().map(|&a| a as f64 / mcmc.nmcmc as f64).collect();
    Ok(chain)
}

fn check_route(chain: &GpChain, req: &PredictRequest, ge: bool, grad: bool) -> Result<()> {
    if chain.gradient_enhanced != ge {
        return Err(Error::InvalidParameter(format!(
            "chain is {}gradient-enhanced",
            if chain.gradient_enhanced { "" } else { "not " }
        )));
    }
    if req.want_gradient != grad {
        return Err(Error::InvalidParameter(format!(
            "request {} gradients",
            if req.want_gradient { "asks for" } else { "does not ask for" }
        )));
    }
    Ok(())
}

/// Response predictions from a plain GP.
pub fn predict_gp(chain: &GpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, false, false)?;
    predict_shallow(chain, req)
}

/// Joint response and gradient predictions from a plain GP.
pub fn predict_gp_all(chain: &GpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, false, true)?;
    predict_shallow(chain, req)
}

/// Response predictions from a gradient-enhanced GP.
pub fn predict_gegp(chain: &GpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, true, false)?;
    predict_shallow(chain, req)
}

/// Joint response and gradient predictions from a gradient-enhanced GP.
pub fn predict_gegp_all(chain: &GpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, true, true)?;
    predict_shallow(chain, req)
}

fn predict_shallow(chain: &GpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    req.validate(chain.data.dim())?;
    let xp = Points::from_matrix(&req.xp);
    let count = chain.retained();
    let total_draws = req.joint_samples.unwrap_or(0);
    let n_p = req.n_p();
    collect_over_iterations(count, !req.lite, n_p, req.xp.ncols(), req.want_gradient, |t| {
        let draws = if total_draws > 0 { draws_for(t, count, total_draws) } else { 0 };
        let mode = if !req.lite || draws > 0 { CovMode::Full } else { CovMode::Diag };
        let layer = chain.layer(&chain.thetas[t]);
        let mut pred = krige(&layer, &chain.values, &xp, req.want_gradient, mode, Scale::Profiled)?;
        pred.mean.rows_mut(0, n_p).add_scalar_mut(chain.y_center);
        let cov = pred.cov.expect("covariance requested");
        let var = cov.variances();
        let mut samples = Vec::with_capacity(draws);
        if draws > 0 {
            let Covariance::Full(c) = &cov else { unreachable!() };
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            rng.set_stream(t as u64);
            for _ in 0..draws {
                samples.push(draw_joint(&pred.mean, c, &mut rng)?);
            }
        }
        let cov = match cov {
            Covariance::Full(c) if !req.lite => Some(c),
            _ => None,
        };
        Ok(PerIteration {
            mean: pred.mean,
            var,
            cov,
            samples,
        })
    })
}
