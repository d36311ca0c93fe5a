//! Flat `key = value` experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use gradgp::settings::DEFAULT_VECCHIA_M;
use gradgp::{FitSettings, LatentMean, McmcSettings, ModelKind, WarpTransfer};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub function: String,
    pub dim: usize,
    pub n: usize,
    pub repetitions: usize,
    pub models: Vec<ModelKind>,
    /// Squiggle width.
    pub sigma: Option<f64>,
    pub shallow: McmcSettings,
    pub deep: McmcSettings,
    pub vecchia: bool,
    pub vecchia_m: usize,
    pub seed: u64,
    pub output: PathBuf,
    /// Defaults to `100 D`.
    pub test_size: Option<usize>,
    pub warp: WarpTransfer,
    pub latent_mean: LatentMean,
}

pub const KEYS: &[&str] = &[
    "function",
    "dim",
    "n",
    "repetitions",
    "models",
    "sigma",
    "shallow.nmcmc",
    "shallow.burn",
    "shallow.thin",
    "deep.nmcmc",
    "deep.burn",
    "deep.thin",
    "vecchia",
    "vecchia.m",
    "seed",
    "output",
    "test_size",
    "warp",
    "latent_mean",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            function: String::new(),
            dim: 0,
            n: 0,
            repetitions: 1,
            models: ModelKind::ALL.to_vec(),
            sigma: None,
            shallow: McmcSettings::SHALLOW,
            deep: McmcSettings::DEEP,
            vecchia: false,
            vecchia_m: DEFAULT_VECCHIA_M,
            seed: 0,
            output: PathBuf::from("out"),
            test_size: None,
            warp: WarpTransfer::Mean,
            latent_mean: LatentMean::Zero,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

/// Splits `key=value`.
pub fn split_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got '{s}'")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).map_err(|e| CliError::Config(format!("line {}: {e}", lineno + 1)))?;
            cfg.set(&k, &v)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "function" => self.function = value.to_ascii_lowercase(),
            "dim" => self.dim = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "models" => {
                self.models = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<ModelKind>())
                    .collect::<std::result::Result<_, _>>()?;
            }
            "sigma" => self.sigma = Some(parse(key, value)?),
            "shallow.nmcmc" => self.shallow.nmcmc = parse(key, value)?,
            "shallow.burn" => self.shallow.burn = parse(key, value)?,
            "shallow.thin" => self.shallow.thin = parse(key, value)?,
            "deep.nmcmc" => self.deep.nmcmc = parse(key, value)?,
            "deep.burn" => self.deep.burn = parse(key, value)?,
            "deep.thin" => self.deep.thin = parse(key, value)?,
            "vecchia" => self.vecchia = parse_bool(key, value)?,
            "vecchia.m" => self.vecchia_m = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "test_size" => self.test_size = Some(parse(key, value)?),
            "warp" => {
                self.warp = match value {
                    "mean" => WarpTransfer::Mean,
                    "sample" => WarpTransfer::Sample,
                    _ => return Err(CliError::Config(format!("warp must be 'mean' or 'sample', got '{value}'"))),
                }
            }
            "latent_mean" => {
                self.latent_mean = match value {
                    "zero" => LatentMean::Zero,
                    "identity" => LatentMean::Identity,
                    _ => {
                        return Err(CliError::Config(format!(
                            "latent_mean must be 'zero' or 'identity', got '{value}'"
                        )))
                    }
                }
            }
            _ => {
                return Err(CliError::Config(format!(
                    "unknown key '{key}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.function.is_empty() {
            return Err(CliError::Config("'function' is required".into()));
        }
        match self.function.as_str() {
            "step" if self.dim > 1 => return Err(CliError::Config("step is one-dimensional".into())),
            "squiggle" if self.dim != 0 && self.dim != 2 => {
                return Err(CliError::Config("squiggle is two-dimensional".into()))
            }
            "plateau" | "ignition" if self.dim == 0 => {
                return Err(CliError::Config(format!("'dim' is required for {}", self.function)))
            }
            _ => {}
        }
        if self.n < 2 {
            return Err(CliError::Config("'n' must be at least 2".into()));
        }
        if self.repetitions < 1 {
            return Err(CliError::Config("'repetitions' must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("'models' must name at least one model".into()));
        }
        if self.vecchia_m < 1 {
            return Err(CliError::Config("'vecchia.m' must be at least 1".into()));
        }
        if self.test_size == Some(0) {
            return Err(CliError::Config("'test_size' must be positive".into()));
        }
        self.shallow
            .validate()
            .map_err(|e| CliError::Config(format!("shallow MCMC settings: {e}")))?;
        self.deep
            .validate()
            .map_err(|e| CliError::Config(format!("deep MCMC settings: {e}")))?;
        Ok(())
    }

    /// Input dimension, resolving fixed-dimension functions.
    pub fn resolved_dim(&self) -> usize {
        match self.function.as_str() {
            "step" => 1,
            "squiggle" => 2,
            _ => self.dim,
        }
    }

    pub fn test_size(&self) -> usize {
        self.test_size.unwrap_or(100 * self.resolved_dim())
    }

    pub fn settings_for(&self, kind: ModelKind) -> FitSettings {
        let mut s: FitSettings = kind.default_settings();
        s.mcmc = if kind.is_deep() { self.deep } else { self.shallow };
        s.vecchia_m = self.vecchia.then_some(self.vecchia_m);
        s.warp = self.warp;
        s.latent_mean = self.latent_mean;
        s
    }
}
