//! Uniform access to the four surrogate models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingSet;
use crate::dgp::{fit_dgp, fit_gedgp, DgpChain};
use crate::error::{Error, Result};
use crate::gp::{fit_gegp, fit_gp, GpChain};
use crate::moments::{PosteriorMoments, PredictRequest};
use crate::settings::{FitSettings, McmcSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gp,
    Dgp,
    Gegp,
    Gedgp,
}

impl ModelKind {
    /// Plot order: models without gradient-enhancement first.
    pub const ALL: [ModelKind; 4] = [ModelKind::Gp, ModelKind::Dgp, ModelKind::Gegp, ModelKind::Gedgp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gp => "gp",
            ModelKind::Dgp => "dgp",
            ModelKind::Gegp => "gegp",
            ModelKind::Gedgp => "gedgp",
        }
    }

    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::Dgp | ModelKind::Gedgp)
    }

    pub fn gradient_enhanced(self) -> bool {
        matches!(self, ModelKind::Gegp | ModelKind::Gedgp)
    }

    /// Default settings for this model class.
    pub fn default_settings(self) -> FitSettings {
        if self.is_deep() {
            FitSettings::deep()
        } else {
            FitSettings::shallow()
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gp" => Ok(ModelKind::Gp),
            "dgp" => Ok(ModelKind::Dgp),
            "gegp" => Ok(ModelKind::Gegp),
            "gedgp" => Ok(ModelKind::Gedgp),
            other => Err(Error::InvalidParameter(format!(
                "unknown model '{other}' (expected gp, gegp, dgp or gedgp)"
            ))),
        }
    }
}

/// A fitted chain of any of the four models.
#[derive(Debug, Clone)]
pub enum Chain {
    Shallow(GpChain),
    Deep(DgpChain),
}

impl Chain {
    pub fn kind(&self) -> ModelKind {
        match self {
            Chain::Shallow(c) if c.gradient_enhanced() => ModelKind::Gegp,
            Chain::Shallow(_) => ModelKind::Gp,
            Chain::Deep(c) if c.gradient_enhanced() => ModelKind::Gedgp,
            Chain::Deep(_) => ModelKind::Dgp,
        }
    }

    pub fn data(&self) -> &TrainingSet {
        match self {
            Chain::Shallow(c) => c.data(),
            Chain::Deep(c) => c.data(),
        }
    }

    pub fn settings(&self) -> &FitSettings {
        match self {
            Chain::Shallow(c) => c.settings(),
            Chain::Deep(c) => c.settings(),
        }
    }

    pub fn retained(&self) -> usize {
        match self {
            Chain::Shallow(c) => c.retained(),
            Chain::Deep(c) => c.retained(),
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PosteriorMoments> {
        match self {
            Chain::Shallow(c) => c.predict(req),
            Chain::Deep(c) => c.predict(req),
        }
    }

    pub fn continue_fit<R: Rng + ?Sized>(&self, mcmc: McmcSettings, rng: &mut R) -> Result<Chain> {
        Ok(match self {
            Chain::Shallow(c) => Chain::Shallow(c.continue_fit(mcmc, rng)?),
            Chain::Deep(c) => Chain::Deep(c.continue_fit(mcmc, rng)?),
        })
    }
}

pub fn fit_model<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &TrainingSet,
    settings: &FitSettings,
    rng: &mut R,
) -> Result<Chain> {
    Ok(match kind {
        ModelKind::Gp => Chain::Shallow(fit_gp(data, settings, rng)?),
        ModelKind::Gegp => Chain::Shallow(fit_gegp(data, settings, rng)?),
        ModelKind::Dgp => Chain::Deep(fit_dgp(data, settings, rng)?),
        ModelKind::Gedgp => Chain::Deep(fit_gedgp(data, settings, rng)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gek".parse::<ModelKind>().is_err());
    }
}
