//! Metropolis-Hastings updates for lengthscales.

use rand::Rng;

use crate::settings::{ProposalWindow, ThetaPrior};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhStep {
    pub theta: f64,
    /// Log-likelihood at `theta`.
    pub loglik: f64,
    pub accepted: bool,
}

/// One MH step with a multiplicative uniform window proposal.
///
/// `loglik` returns `None` when the likelihood cannot be evaluated at the
/// proposal (for example a failed factorization); such proposals are rejected.
/// The proposal is asymmetric: its density at `theta*` from `theta` is
/// proportional to `1 / theta`, hence the `log(theta) - log(theta*)` correction.
pub fn mh_lengthscale<F, R>(
    theta_prev: f64,
    loglik_prev: f64,
    mut loglik: F,
    prior: &ThetaPrior,
    window: &ProposalWindow,
    rng: &mut R,
) -> MhStep
where
    F: FnMut(f64) -> Option<f64>,
    R: Rng + ?Sized,
{
    let (lo, hi) = window.bounds(theta_prev);
    let proposal = rng.random_range(lo..hi);
    let reject = MhStep {
        theta: theta_prev,
        loglik: loglik_prev,
        accepted: false,
    };
    let log_u = rng.random::<f64>().ln();
    let Some(ll_new) = loglik(proposal) else {
        return reject;
    };
    let log_ratio = ll_new - loglik_prev + prior.log_density(proposal) - prior.log_density(theta_prev)
        + theta_prev.ln()
        - proposal.ln();
    if log_u < log_ratio {
        MhStep {
            theta: proposal,
            loglik: ll_new,
            accepted: true,
        }
    } else {
        reject
    }
}
