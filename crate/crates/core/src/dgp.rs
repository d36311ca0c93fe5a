//! Two-layer deep GP and its gradient-enhanced variant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::TrainingSet;
use crate::error::{Error, Result};
use crate::gauss::{self, CholFactor, Covariance};
use crate::kernel::Points;
use crate::layer::{draw_joint, krige, CovMode, Layer, LayerFactor, Prediction, Scale};
use crate::mh::mh_lengthscale;
use crate::moments::{collect_over_iterations, draws_for, PerIteration, PosteriorMoments, PredictRequest};
use crate::settings::{FitSettings, LatentMean, McmcSettings, WarpTransfer};
use crate::vecchia::VecchiaPlan;

/// Reciprocal condition number below which the warp Jacobian is treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// Latent warping at one iteration.
///
/// `w` holds one column per node. Without gradients it is `n x D`; with
/// gradients it is `N x D`, `N = n (1 + D)`, each column stacked as
/// `[w_d; dw_d/dx1; ...; dw_d/dxD]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub n: usize,
    pub w: DMatrix<f64>,
    /// `[y; dy/dw1; ...; dy/dwD]` (centred `y`), gradient-enhanced only.
    pub y_all: Option<DVector<f64>>,
}

impl LatentState {
    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn gradient_enhanced(&self) -> bool {
        self.w.nrows() > self.n
    }

    /// The `n x D` warped locations.
    pub fn warped(&self) -> DMatrix<f64> {
        self.w.rows(0, self.n).into_owned()
    }

    /// The stacked `N x D` matrix, gradient-enhanced only.
    pub fn w_all(&self) -> Option<&DMatrix<f64>> {
        self.gradient_enhanced().then_some(&self.w)
    }

    /// Warp Jacobian at training row `i`: entry `(f, d)` is `dw_d/dx^f`.
    pub fn jacobian(&self, i: usize) -> Option<DMatrix<f64>> {
        self.gradient_enhanced().then(|| jacobian_at(&self.w, self.n, i))
    }
}

fn jacobian_at(w_all: &DMatrix<f64>, n: usize, i: usize) -> DMatrix<f64> {
    let dim = w_all.ncols();
    DMatrix::from_fn(dim, dim, |f, d| w_all[((f + 1) * n + i, d)])
}

/// Identity warp `W = X`, with indicator derivative blocks when gradient-enhanced.
pub fn init_latent(x: &DMatrix<f64>, gradient_enhanced: bool) -> LatentState {
    let (n, dim) = x.shape();
    let rows = if gradient_enhanced { n * (1 + dim) } else { n };
    let mut w = DMatrix::zeros(rows, dim);
    w.rows_mut(0, n).copy_from(x);
    if gradient_enhanced {
        for d in 0..dim {
            w.rows_mut((d + 1) * n, n).column_mut(d).fill(1.0);
        }
    }
    LatentState { n, w, y_all: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainDirection {
    /// Solve `J g_w = g_x` for `g_w`.
    ToW,
    /// `g_x = J g_w`.
    ToX,
}

/// Chain rule between `x`- and `w`-gradients, with `jac[(f, d)] = dw_d/dx^f`.
pub fn solve_chain(jac: &DMatrix<f64>, rhs: &DVector<f64>, direction: ChainDirection) -> Result<DVector<f64>> {
    let dim = jac.nrows();
    if !jac.is_square() || rhs.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "chain rule system",
            expected: dim,
            found: if jac.is_square() { rhs.len() } else { jac.ncols() },
        });
    }
    match direction {
        ChainDirection::ToX => Ok(jac * rhs),
        ChainDirection::ToW => {
            let sv = jac.singular_values();
            let max = sv.max();
            let rcond = if max > 0.0 { sv.min() / max } else { 0.0 };
            if !(rcond >= RCOND_MIN) {
                return Err(Error::IllConditioned { rcond });
            }
            jac.clone()
                .lu()
                .solve(rhs)
                .ok_or(Error::IllConditioned { rcond })
        }
    }
}

/// `[y_c; dy/dw]` from observed `[y_c; dy/dx]` under the warp `w_all`.
fn response_all(w_all: &DMatrix<f64>, n: usize, observed: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = w_all.ncols();
    let mut out = observed.clone();
    let mut gx = DVector::zeros(dim);
    for i in 0..n {
        for f in 0..dim {
            gx[f] = observed[(f + 1) * n + i];
        }
        let gw = solve_chain(&jacobian_at(w_all, n, i), &gx, ChainDirection::ToW)?;
        for d in 0..dim {
            out[(d + 1) * n + i] = gw[d];
        }
    }
    Ok(out)
}

/// Angle and shrinking bracket of an elliptical slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssAngleState {
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
}

impl EssAngleState {
    pub fn start<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let gamma = rng.random_range(0.0..2.0 * PI);
        EssAngleState {
            gamma,
            lo: gamma - 2.0 * PI,
            hi: gamma,
        }
    }

    /// Shrinks the bracket towards zero past the rejected angle and redraws.
    pub fn shrink<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.gamma < 0.0 {
            self.lo = self.gamma;
        } else {
            self.hi = self.gamma;
        }
        self.gamma = rng.random_range(self.lo..=self.hi);
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Point on the ellipse through `current` and `mean + prior_draw`:
/// `mean + (current - mean) cos(gamma) + prior_draw sin(gamma)`.
pub fn ess_proposal(current: &DVector<f64>, mean: &DVector<f64>, prior_draw: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let (s, c) = gamma.sin_cos();
    DVector::from_fn(current.len(), |i, _| current[i] * c + mean[i] * (1.0 - c) + prior_draw[i] * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssOutcome {
    pub value: DVector<f64>,
    pub loglik: f64,
    /// Number of likelihood evaluations.
    pub evaluations: usize,
    pub moved: bool,
}

/// Smallest bracket width before the slice gives up and keeps the current state.
pub const ESS_MIN_WIDTH: f64 = 1e-12;

/// One elliptical slice update of `current` under a Gaussian prior with mean
/// `mean`, given a zero-mean prior draw. `loglik` should return `-inf` where
/// the likelihood cannot be evaluated.
pub fn elliptical_slice<F, R>(
    current: &DVector<f64>,
    mean: &DVector<f64>,
    prior_draw: &DVector<f64>,
    loglik_current: f64,
    mut loglik: F,
    rng: &mut R,
) -> EssOutcome
where
    F: FnMut(&DVector<f64>) -> f64,
    R: Rng + ?Sized,
{
    let threshold = loglik_current + rng.random::<f64>().ln();
    let mut angle = EssAngleState::start(rng);
    let mut evaluations = 0;
    loop {
        let proposal = ess_proposal(current, mean, prior_draw, angle.gamma);
        let ll = loglik(&proposal);
        evaluations += 1;
        if ll > threshold {
            return EssOutcome {
                value: proposal,
                loglik: ll,
                evaluations,
                moved: true,
            };
        }
        angle.shrink(rng);
        if angle.width() < ESS_MIN_WIDTH {
            return EssOutcome {
                value: current.clone(),
                loglik: loglik_current,
                evaluations,
                moved: false,
            };
        }
    }
}

/// ESS update of node `d` (column `d` of `state.w`). `prior_chol` factors the
/// node's prior covariance and `prior_mean` is its prior mean; `loglik_eval`
/// scores a whole candidate state.
pub fn ess_node<F, R>(
    d: usize,
    state: &LatentState,
    prior_chol: &CholFactor,
    prior_mean: &DVector<f64>,
    loglik_current: f64,
    mut loglik_eval: F,
    rng: &mut R,
) -> Result<(LatentState, f64)>
where
    F: FnMut(&LatentState) -> f64,
    R: Rng + ?Sized,
{
    if d >= state.dim() {
        return Err(Error::InvalidParameter(format!("node {d} out of range")));
    }
    if prior_chol.dim() != state.w.nrows() || prior_mean.len() != state.w.nrows() {
        return Err(Error::DimensionMismatch {
            context: "latent node prior",
            expected: state.w.nrows(),
            found: prior_chol.dim(),
        });
    }
    let draw = gauss::mvn_sample(&DVector::zeros(prior_chol.dim()), prior_chol, rng);
    let current = state.w.column(d).into_owned();
    let mut candidate = state.clone();
    let out = elliptical_slice(
        &current,
        prior_mean,
        &draw,
        loglik_current,
        |v| {
            candidate.w.set_column(d, v);
            loglik_eval(&candidate)
        },
        rng,
    );
    let mut next = state.clone();
    next.w.set_column(d, &out.value);
    Ok((next, out.loglik))
}

/// Lengthscales and latent state at one retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSample {
    pub state: LatentState,
    /// Isotropic lengthscale of each inner node.
    pub theta_w: Vec<f64>,
    /// Isotropic outer lengthscale.
    pub theta_y: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DgpDiagnostics {
    pub accept_theta_w: Vec<f64>,
    pub accept_theta_y: f64,
    /// Mean likelihood evaluations per ESS update.
    pub ess_evaluations: f64,
}

/// Retained samples of a (ge)DGP fit.
#[derive(Debug, Clone)]
pub struct DgpChain {
    data: TrainingSet,
    gradient_enhanced: bool,
    settings: FitSettings,
    y_center: f64,
    observed: DVector<f64>,
    samples: Vec<DgpSample>,
    last: DgpSample,
    plan: Option<VecchiaPlan>,
    diagnostics: DgpDiagnostics,
    points: Points,
}

impl DgpChain {
    /// Builds a chain from explicit samples; for gradient-enhanced chains the
    /// `y_all` of every sample is recomputed from the data.
    pub fn from_samples(
        data: TrainingSet,
        gradient_enhanced: bool,
        settings: FitSettings,
        samples: Vec<DgpSample>,
        last: Option<DgpSample>,
        plan: Option<VecchiaPlan>,
    ) -> Result<Self> {
        let y_center = data.y_mean();
        let observed = data.stacked(y_center, gradient_enhanced)?;
        let n = data.n();
        let dim = data.dim();
        let rows = if gradient_enhanced { n * (1 + dim) } else { n };
        if let Some(p) = &plan {
            p.check_layout(n, if gradient_enhanced { dim } else { 0 })?;
        }
        let fix = |mut s: DgpSample| -> Result<DgpSample> {
            if s.state.n != n || s.state.w.shape() != (rows, dim) || s.theta_w.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "latent sample",
                    expected: rows,
                    found: s.state.w.nrows(),
                });
            }
            if s.theta_w.iter().chain([&s.theta_y]).any(|&t| !(t > 0.0)) {
                return Err(Error::InvalidParameter("lengthscales must be positive".into()));
            }
            s.state.y_all = if gradient_enhanced {
                Some(response_all(&s.state.w, n, &observed)?)
            } else {
                None
            };
            Ok(s)
        };
        let samples = samples.into_iter().map(fix).collect::<Result<Vec<_>>>()?;
        let last = match last {
            Some(l) => fix(l)?,
            None => samples
                .last()
                .cloned()
                .ok_or_else(|| Error::InvalidParameter("chain has no samples".into()))?,
        };
        let points = Points::from_matrix(&data.x);
        Ok(DgpChain {
            data,
            gradient_enhanced,
            settings,
            y_center,
            observed,
            samples,
            last,
            plan,
            diagnostics: DgpDiagnostics::default(),
            points,
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

    pub fn samples(&self) -> &[DgpSample] {
        &self.samples
    }

    pub fn retained(&self) -> usize {
        self.samples.len()
    }

    pub fn last(&self) -> &DgpSample {
        &self.last
    }

    pub fn plan(&self) -> Option<&VecchiaPlan> {
        self.plan.as_ref()
    }

    pub fn diagnostics(&self) -> &DgpDiagnostics {
        &self.diagnostics
    }

    pub fn y_center(&self) -> f64 {
        self.y_center
    }

    /// Centred observations `[y_c; dy/dx]` (or `y_c`).
    pub fn observed(&self) -> &DVector<f64> {
        &self.observed
    }

    /// Keeps only retained iteration `t`.
    pub fn at(&self, t: usize) -> Result<DgpChain> {
        let s = self
            .samples
            .get(t)
            .ok_or_else(|| Error::InvalidParameter(format!("retained index {t} out of range")))?;
        let mut c = self.clone();
        c.samples = vec![s.clone()];
        Ok(c)
    }

    /// Prior mean of node `d` over the training observations.
    fn node_mean(&self, d: usize) -> DVector<f64> {
        node_mean(&self.data.x, self.gradient_enhanced, self.settings.latent_mean, d)
    }

    fn inner_layer<'a>(&'a self, theta: &'a [f64]) -> Layer<'a> {
        Layer {
            points: &self.points,
            with_grad: self.gradient_enhanced,
            theta,
            eps: self.settings.eps,
            plan: self.plan.as_ref(),
        }
    }

    /// Profiled outer log-likelihood for a latent state.
    pub fn outer_loglik(&self, state: &LatentState, theta_y: f64) -> Result<f64> {
        let warped = Points::from_matrix(&state.warped());
        let theta = vec![theta_y; self.data.dim()];
        let values = match &state.y_all {
            Some(v) => v,
            None => &self.observed,
        };
        let layer = Layer {
            points: &warped,
            with_grad: self.gradient_enhanced,
            theta: &theta,
            eps: self.settings.eps,
            plan: self.plan.as_ref(),
        };
        layer.factor()?.loglik_profiled(layer.plan, values)
    }

    /// Runs `mcmc` more iterations from the final state.
    pub fn continue_fit<R: Rng + ?Sized>(&self, mcmc: McmcSettings, rng: &mut R) -> Result<DgpChain> {
        let settings = FitSettings { mcmc, ..self.settings.clone() };
        settings.validate()?;
        let mut chain = self.clone();
        chain.settings = settings;
        chain.samples.clear();
        run(chain, self.last.clone(), rng)
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PosteriorMoments> {
        predict_deep(self, req)
    }
}

fn node_mean(x: &DMatrix<f64>, with_grad: bool, mean: LatentMean, d: usize) -> DVector<f64> {
    let (n, dim) = x.shape();
    let rows = if with_grad { n * (1 + dim) } else { n };
    let mut m = DVector::zeros(rows);
    if mean == LatentMean::Identity {
        m.rows_mut(0, n).copy_from(&x.column(d));
        if with_grad {
            m.rows_mut((d + 1) * n, n).fill(1.0);
        }
    }
    m
}

/// Fits a two-layer DGP to responses only.
pub fn fit_dgp<R: Rng + ?Sized>(data: &TrainingSet, settings: &FitSettings, rng: &mut R) -> Result<DgpChain> {
    fit(data, false, settings, rng)
}

/// Fits a two-layer DGP to responses and gradients.
pub fn fit_gedgp<R: Rng + ?Sized>(data: &TrainingSet, settings: &FitSettings, rng: &mut R) -> Result<DgpChain> {
    if !data.has_grad() {
        return Err(Error::InvalidParameter("gradient-enhanced DGP requires training gradients".into()));
    }
    fit(data, true, settings, rng)
}

fn fit<R: Rng + ?Sized>(data: &TrainingSet, ge: bool, settings: &FitSettings, rng: &mut R) -> Result<DgpChain> {
    settings.validate()?;
    let points = Points::from_matrix(&data.x);
    let plan = match settings.vecchia_m {
        Some(m) => Some(VecchiaPlan::build(&points, if ge { data.dim() } else { 0 }, m, rng)?),
        None => None,
    };
    let init = DgpSample {
        state: init_latent(&data.x, ge),
        theta_w: vec![settings.theta_init; data.dim()],
        theta_y: settings.theta_outer_init,
    };
    let chain = DgpChain::from_samples(data.clone(), ge, settings.clone(), Vec::new(), Some(init.clone()), plan)?;
    let init = chain.last.clone();
    run(chain, init, rng)
}

fn run<R: Rng + ?Sized>(mut chain: DgpChain, start: DgpSample, rng: &mut R) -> Result<DgpChain> {
    let dim = chain.data.dim();
    let n = chain.data.n();
    let ge = chain.gradient_enhanced;
    let settings = chain.settings.clone();
    let mcmc = settings.mcmc;
    let means: Vec<DVector<f64>> = (0..dim).map(|d| chain.node_mean(d)).collect();

    let mut cur = start;
    let inner_factor = |theta: f64| -> Result<LayerFactor> { chain.inner_layer(&vec![theta; dim]).factor() };
    let mut factors = cur
        .theta_w
        .iter()
        .map(|&t| inner_factor(t))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_iteration(0))?;
    let mut outer_ll = chain.outer_loglik(&cur.state, cur.theta_y).map_err(|e| e.at_iteration(0))?;

    let plan = chain.plan.as_ref();
    let observed = &chain.observed;
    let mut accept_w = vec![0usize; dim];
    let mut accept_y = 0usize;
    let mut ess_evals = 0usize;
    let mut samples = Vec::with_capacity(mcmc.retained());

    for iter in 1..=mcmc.nmcmc {
        for d in 0..dim {
            let draw = factors[d].sample(plan, rng);
            let current = cur.state.w.column(d).into_owned();
            let mut candidate = cur.state.clone();
            let theta_y = cur.theta_y;
            let out = elliptical_slice(
                &current,
                &means[d],
                &draw,
                outer_ll,
                |v| {
                    candidate.w.set_column(d, v);
                    if ge {
                        match response_all(&candidate.w, n, observed) {
                            Ok(y) => candidate.y_all = Some(y),
                            Err(_) => return f64::NEG_INFINITY,
                        }
                    }
                    chain.outer_loglik(&candidate, theta_y).unwrap_or(f64::NEG_INFINITY)
                },
                rng,
            );
            ess_evals += out.evaluations;
            if out.moved {
                cur.state.w.set_column(d, &out.value);
                if ge {
                    cur.state.y_all = Some(response_all(&cur.state.w, n, observed).map_err(|e| e.at_iteration(iter))?);
                }
                outer_ll = out.loglik;
            }
        }

        for d in 0..dim {
            let resid = cur.state.w.column(d) - &means[d];
            let ll_cur = factors[d].log_density(plan, &resid).map_err(|e| e.at_iteration(iter))?;
            let mut proposed: Option<LayerFactor> = None;
            let step = mh_lengthscale(
                cur.theta_w[d],
                ll_cur,
                |t| {
                    let f = inner_factor(t).ok()?;
                    let ll = f.log_density(plan, &resid).ok()?;
                    proposed = Some(f);
                    Some(ll)
                },
                &settings.theta_prior,
                &settings.window,
                rng,
            );
            if step.accepted {
                cur.theta_w[d] = step.theta;
                factors[d] = proposed.take().expect("accepted proposal has a factor");
                accept_w[d] += 1;
            }
        }

        let state = &cur.state;
        let step = mh_lengthscale(
            cur.theta_y,
            outer_ll,
            |t| chain.outer_loglik(state, t).ok(),
            &settings.theta_outer_prior,
            &settings.window,
            rng,
        );
        cur.theta_y = step.theta;
        outer_ll = step.loglik;
        accept_y += usize::from(step.accepted);

        if mcmc.keeps(iter) {
            samples.push(cur.clone());
        }
    }

    let iters = mcmc.nmcmc as f64;
    chain.diagnostics = DgpDiagnostics {
        accept_theta_w: accept_w.iter().map(|&a| a as f64 / iters).collect(),
        accept_theta_y: accept_y as f64 / iters,
        ess_evaluations: ess_evals as f64 / (iters * dim as f64),
    };
    chain.samples = samples;
    chain.last = cur;
    Ok(chain)
}

fn check_route(chain: &DgpChain, req: &PredictRequest, ge: bool, grad: bool) -> Result<()> {
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

/// Response predictions from a DGP.
pub fn predict_dgp(chain: &DgpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, false, false)?;
    predict_deep(chain, req)
}

/// Joint response and gradient predictions from a DGP.
pub fn predict_dgp_grad(chain: &DgpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, false, true)?;
    predict_deep(chain, req)
}

/// Response predictions from a gradient-enhanced DGP.
pub fn predict_gedgp(chain: &DgpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, true, false)?;
    predict_deep(chain, req)
}

/// Joint response and gradient predictions from a gradient-enhanced DGP.
pub fn predict_gedgp_grad(chain: &DgpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    check_route(chain, req, true, true)?;
    predict_deep(chain, req)
}

/// Warped predictive locations, and their Jacobians when `want_grad`
/// (block-stacked like the training `w_all`).
fn predict_warp(
    chain: &DgpChain,
    sample: &DgpSample,
    xp: &DMatrix<f64>,
    want_grad: bool,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let points_p = Points::from_matrix(xp);
    let n_p = xp.nrows();
    let dim = xp.ncols();
    let rows = if want_grad { n_p * (1 + dim) } else { n_p };
    let sampled = chain.settings.warp == WarpTransfer::Sample;
    let mode = match (sampled, chain.plan.is_some()) {
        (false, _) => CovMode::MeanOnly,
        (true, false) => CovMode::Full,
        (true, true) => CovMode::Diag,
    };
    let mut out = DMatrix::zeros(rows, dim);
    for d in 0..dim {
        let theta = vec![sample.theta_w[d]; dim];
        let layer = chain.inner_layer(&theta);
        let resid = sample.state.w.column(d) - chain.node_mean(d);
        let pred = krige(&layer, &resid, &points_p, want_grad, mode, Scale::Fixed(1.0))?;
        let mut col = match (&pred.cov, sampled) {
            (Some(Covariance::Full(c)), true) => draw_joint(&pred.mean, c, rng)?,
            (Some(Covariance::Diag(v)), true) => {
                DVector::from_fn(rows, |i, _| pred.mean[i] + v[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
            }
            _ => pred.mean,
        };
        col += node_mean(xp, want_grad, chain.settings.latent_mean, d);
        out.set_column(d, &col);
    }
    Ok(out)
}

/// Linear map from `[y; dy/dw]` to `[y; dy/dx]` at the predictive rows.
fn chain_rule_map(warp_all: &DMatrix<f64>, n_p: usize) -> DMatrix<f64> {
    let dim = warp_all.ncols();
    let total = n_p * (1 + dim);
    let mut a = DMatrix::zeros(total, total);
    for j in 0..n_p {
        a[(j, j)] = 1.0;
        for f in 0..dim {
            for d in 0..dim {
                a[((f + 1) * n_p + j, (d + 1) * n_p + j)] = warp_all[((f + 1) * n_p + j, d)];
            }
        }
    }
    a
}

/// Per-location chain rule on moments: means mapped by the Jacobian, variances
/// by its squared entries.
fn chain_rule_diag(warp_all: &DMatrix<f64>, n_p: usize, mean: &DVector<f64>, var: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let dim = warp_all.ncols();
    let mut m = mean.clone();
    let mut v = var.clone();
    for j in 0..n_p {
        for f in 0..dim {
            let (mut sm, mut sv) = (0.0, 0.0);
            for d in 0..dim {
                let a = warp_all[((f + 1) * n_p + j, d)];
                sm += a * mean[(d + 1) * n_p + j];
                sv += a * a * var[(d + 1) * n_p + j];
            }
            m[(f + 1) * n_p + j] = sm;
            v[(f + 1) * n_p + j] = sv;
        }
    }
    (m, v)
}

fn predict_deep(chain: &DgpChain, req: &PredictRequest) -> Result<PosteriorMoments> {
    req.validate(chain.data.dim())?;
    let count = chain.retained();
    let n_p = req.n_p();
    let dim = chain.data.dim();
    let total_draws = req.joint_samples.unwrap_or(0);
    if total_draws > 0 && chain.plan.is_some() {
        return Err(Error::InvalidParameter("joint samples need dense covariances; disable Vecchia".into()));
    }
    collect_over_iterations(count, !req.lite, n_p, dim, req.want_gradient, |t| {
        let sample = &chain.samples[t];
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        rng.set_stream(t as u64);
        let warp = predict_warp(chain, sample, &req.xp, req.want_gradient, &mut rng)?;
        let warped_p = Points::from_matrix(&warp.rows(0, n_p).into_owned());
        let warped = Points::from_matrix(&sample.state.warped());
        let theta = vec![sample.theta_y; dim];
        let values = sample.state.y_all.as_ref().unwrap_or(&chain.observed);
        let layer = Layer {
            points: &warped,
            with_grad: chain.gradient_enhanced,
            theta: &theta,
            eps: chain.settings.eps,
            plan: chain.plan.as_ref(),
        };
        let draws = if total_draws > 0 { draws_for(t, count, total_draws) } else { 0 };
        let mode = if !req.lite || draws > 0 { CovMode::Full } else { CovMode::Diag };
        let Prediction { mut mean, cov } = krige(&layer, values, &warped_p, req.want_gradient, mode, Scale::Profiled)?;
        mean.rows_mut(0, n_p).add_scalar_mut(chain.y_center);
        let cov = cov.expect("covariance requested");

        let (mean, var, full) = match (req.want_gradient, cov) {
            (false, Covariance::Full(c)) => (mean, c.diagonal(), Some(c)),
            (false, Covariance::Diag(v)) => (mean, v, None),
            (true, Covariance::Full(c)) => {
                let a = chain_rule_map(&warp, n_p);
                let m = &a * &mean;
                let mut c = &a * c * a.transpose();
                c = (&c + c.transpose()) * 0.5;
                (m, c.diagonal(), Some(c))
            }
            (true, Covariance::Diag(v)) => {
                let (m, v) = chain_rule_diag(&warp, n_p, &mean, &v);
                (m, v, None)
            }
        };
        let mut samples = Vec::with_capacity(draws);
        if let Some(c) = &full {
            for _ in 0..draws {
                samples.push(draw_joint(&mean, c, &mut rng)?);
            }
        }
        Ok(PerIteration {
            mean,
            var,
            cov: if req.lite { None } else { full },
            samples,
        })
    })
}
