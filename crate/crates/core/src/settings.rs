use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chain length, burn-in and thinning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub nmcmc: usize,
    pub burn: usize,
    pub thin: usize,
}

impl McmcSettings {
    /// 5000 iterations, 3000 burned, thinned by 2.
    pub const SHALLOW: McmcSettings = McmcSettings {
        nmcmc: 5000,
        burn: 3000,
        thin: 2,
    };

    /// 10000 iterations, 8000 burned, thinned by 2.
    pub const DEEP: McmcSettings = McmcSettings {
        nmcmc: 10000,
        burn: 8000,
        thin: 2,
    };

    pub fn new(nmcmc: usize, burn: usize, thin: usize) -> Result<Self> {
        let s = McmcSettings { nmcmc, burn, thin };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin < 1 {
            return Err(Error::InvalidParameter("thin must be >= 1".into()));
        }
        if self.burn >= self.nmcmc {
            return Err(Error::InvalidParameter(format!(
                "burn ({}) must be smaller than nmcmc ({})",
                self.burn, self.nmcmc
            )));
        }
        Ok(())
    }

    /// Number of retained iterations, `(nmcmc - burn) / thin`.
    pub fn retained(&self) -> usize {
        (self.nmcmc - self.burn) / self.thin
    }

    /// Whether 1-based iteration `iter` is retained.
    pub fn keeps(&self, iter: usize) -> bool {
        iter > self.burn && (iter - self.burn) % self.thin == 0
    }
}

/// Prior on a lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaPrior {
    Gamma { shape: f64, rate: f64 },
    Flat,
}

impl ThetaPrior {
    pub const INNER: ThetaPrior = ThetaPrior::Gamma { shape: 1.5, rate: 0.975 };
    pub const OUTER: ThetaPrior = ThetaPrior::Gamma { shape: 1.5, rate: 0.65 };

    /// Log-density up to a constant; `-inf` outside the support.
    pub fn log_density(&self, theta: f64) -> f64 {
        if !(theta > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ThetaPrior::Gamma { shape, rate } => (shape - 1.0) * theta.ln() - rate * theta,
            ThetaPrior::Flat => 0.0,
        }
    }
}

impl Default for ThetaPrior {
    fn default() -> Self {
        ThetaPrior::Gamma {
            shape: 1.5,
            rate: 4.0,
        }
    }
}

/// Multiplicative sliding window: proposals uniform on
/// `[lower * theta / upper, upper * theta / lower]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalWindow {
    pub lower: f64,
    pub upper: f64,
}

impl ProposalWindow {
    pub fn bounds(&self, theta: f64) -> (f64, f64) {
        (self.lower * theta / self.upper, self.upper * theta / self.lower)
    }
}

impl Default for ProposalWindow {
    fn default() -> Self {
        ProposalWindow {
            lower: 1.0,
            upper: 2.0,
        }
    }
}

/// How warped predictive locations are carried into the outer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WarpTransfer {
    #[default]
    Mean,
    Sample,
}

/// Prior mean of the latent nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LatentMean {
    #[default]
    Zero,
    /// Node `d` centred on input column `d` (with indicator partials).
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub mcmc: McmcSettings,
    /// Jitter on the correlation scale.
    pub eps: f64,
    /// Prior for shallow-GP or inner-layer lengthscales.
    pub theta_prior: ThetaPrior,
    /// Prior for the outer-layer lengthscale of a DGP.
    pub theta_outer_prior: ThetaPrior,
    pub window: ProposalWindow,
    pub theta_init: f64,
    pub theta_outer_init: f64,
    /// Vecchia conditioning budget; dense when `None`.
    pub vecchia_m: Option<usize>,
    pub warp: WarpTransfer,
    pub latent_mean: LatentMean,
}

pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_VECCHIA_M: usize = 25;

impl FitSettings {
    pub fn shallow() -> Self {
        FitSettings {
            mcmc: McmcSettings::SHALLOW,
            eps: DEFAULT_EPS,
            theta_prior: ThetaPrior::default(),
            theta_outer_prior: ThetaPrior::default(),
            window: ProposalWindow::default(),
            theta_init: 0.1,
            theta_outer_init: 0.1,
            vecchia_m: None,
            warp: WarpTransfer::Mean,
            latent_mean: LatentMean::Zero,
        }
    }

    /// Smooth inner warps a priori: inner lengthscales start at 1 under
    /// Gamma(1.5, 0.975), the outer one under Gamma(1.5, 0.65).
    pub fn deep() -> Self {
        FitSettings {
            mcmc: McmcSettings::DEEP,
            theta_prior: ThetaPrior::INNER,
            theta_outer_prior: ThetaPrior::OUTER,
            theta_init: 1.0,
            ..Self::shallow()
        }
    }

    pub fn with_mcmc(mut self, mcmc: McmcSettings) -> Self {
        self.mcmc = mcmc;
        self
    }

    pub fn with_vecchia(mut self, m: Option<usize>) -> Self {
        self.vecchia_m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid jitter {}", self.eps)));
        }
        if !(self.theta_init > 0.0 && self.theta_outer_init > 0.0) {
            return Err(Error::InvalidParameter("initial lengthscales must be positive".into()));
        }
        if !(self.window.lower > 0.0 && self.window.upper > self.window.lower) {
            return Err(Error::InvalidParameter("proposal window needs 0 < lower < upper".into()));
        }
        if self.vecchia_m == Some(0) {
            return Err(Error::InvalidParameter("vecchia budget m must be >= 1".into()));
        }
        Ok(())
    }
}
