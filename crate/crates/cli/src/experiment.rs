//! Monte Carlo benchmark sweeps.

use std::fs;
use std::io::Write;
use std::time::Instant;

use gradgp::bench::{lhs, score, TestFunction};
use gradgp::{fit_model, ModelKind, PosteriorMoments, PredictRequest, TrainingSet};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "GRADGP_WORKERS";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub function: String,
    pub model: ModelKind,
    pub repetition: usize,
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub rmse_y: f64,
    pub crps_y: f64,
    pub rmse_grad: Option<f64>,
    pub crps_grad: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub model: ModelKind,
    pub repetition: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
}

impl ExperimentOutput {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Training and test data of one repetition, on the unit cube.
pub struct Design {
    pub train: TrainingSet,
    pub test_x: DMatrix<f64>,
    pub test_y: DVector<f64>,
    pub test_grad: DMatrix<f64>,
}

fn stream(repetition: usize, slot: u64) -> u64 {
    ((repetition as u64) << 8) | slot
}

/// Seeded generator for `slot` of `repetition`; slot 0 draws the designs,
/// slot `1 + i` fits model `i`.
pub fn rep_rng(seed: u64, repetition: usize, slot: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream(repetition, slot));
    rng
}

pub fn design(cfg: &ExperimentConfig, func: &TestFunction, repetition: usize) -> Result<Design> {
    let dim = func.dim;
    let mut rng = rep_rng(cfg.seed, repetition, 0);
    let x = lhs(cfg.n, dim, &mut rng);
    let (y, g) = func.eval_rows(&x)?;
    let test_x = lhs(cfg.test_size(), dim, &mut rng);
    let (test_y, test_grad) = func.eval_rows(&test_x)?;
    Ok(Design {
        train: TrainingSet::new(x, y, Some(g))?,
        test_x,
        test_y,
        test_grad,
    })
}

/// Centre and scale of the training responses.
fn standardizer(y: &DVector<f64>) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

fn unstandardize(p: &mut PosteriorMoments, center: f64, scale: f64) {
    p.mean *= scale;
    p.mean.rows_mut(0, p.n_p).add_scalar_mut(center);
    p.var *= scale * scale;
}

/// Fits and scores one model on one repetition.
pub fn run_one(cfg: &ExperimentConfig, func: &TestFunction, design: &Design, repetition: usize, model: ModelKind) -> Result<ResultRow> {
    let start = Instant::now();
    let (center, scale) = standardizer(&design.train.y);
    let train = TrainingSet::new(
        design.train.x.clone(),
        design.train.y.add_scalar(-center) / scale,
        design.train.grad.as_ref().map(|g| g / scale),
    )?;
    let slot = 1 + ModelKind::ALL.iter().position(|&k| k == model).unwrap_or(0) as u64;
    let mut rng = rep_rng(cfg.seed, repetition, slot);
    let chain = fit_model(model, &train, &cfg.settings_for(model), &mut rng)?;
    let mut req = PredictRequest::new(design.test_x.clone()).with_gradient(true);
    req.seed = cfg.seed ^ stream(repetition, slot);
    let mut pred = chain.predict(&req)?;
    unstandardize(&mut pred, center, scale);
    let s = score(&pred, &design.test_y, Some(&design.test_grad))?;
    let finite = [s.rmse_y, s.crps_y, s.rmse_grad.unwrap_or(0.0), s.crps_grad.unwrap_or(0.0)]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(CliError::Input("non-finite score".into()));
    }
    Ok(ResultRow {
        function: func.name.to_string(),
        model,
        repetition,
        seed: cfg.seed,
        n: cfg.n,
        dim: func.dim,
        rmse_y: s.rmse_y,
        crps_y: s.crps_y,
        rmse_grad: s.rmse_grad,
        crps_grad: s.crps_grad,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Worker count from the environment; `None` leaves the choice to rayon.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&w: &usize| w > 0)
}

/// Runs every (repetition, model) pair; failures are collected, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let func = TestFunction::lookup(&cfg.function, cfg.resolved_dim(), cfg.sigma)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers_from_env() {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;

    let tasks: Vec<(usize, ModelKind)> = (0..cfg.repetitions)
        .flat_map(|r| cfg.models.iter().map(move |&m| (r, m)))
        .collect();
    let designs: Vec<std::result::Result<Design, String>> = (0..cfg.repetitions)
        .map(|r| design(cfg, &func, r).map_err(|e| e.to_string()))
        .collect();
    let results: Vec<std::result::Result<ResultRow, Failure>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(r, m)| {
                let fail = |message: String| Failure {
                    model: m,
                    repetition: r,
                    seed: cfg.seed,
                    message,
                };
                let d = designs[r].as_ref().map_err(|e| fail(e.clone()))?;
                run_one(cfg, &func, d, r, m).map_err(|e| fail(e.to_string()))
            })
            .collect()
    });
    let mut out = ExperimentOutput::default();
    for r in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULT_HEADER: [&str; 10] = [
    "function",
    "model",
    "repetition",
    "seed",
    "n",
    "dim",
    "rmse_y",
    "crps_y",
    "rmse_grad",
    "crps_grad",
];

/// Result table without timings, so identical runs give identical bytes.
pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record([
            r.function.clone(),
            r.model.to_string(),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.n.to_string(),
            r.dim.to_string(),
            r.rmse_y.to_string(),
            r.crps_y.to_string(),
            opt(r.rmse_grad),
            opt(r.crps_grad),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

pub fn timings_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["function", "model", "repetition", "wall_time_s"])?;
    for r in rows {
        w.write_record([
            r.function.clone(),
            r.model.to_string(),
            r.repetition.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

/// Writes `results.csv`, `timings.csv` and `failures.log` into the output directory.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("results.csv"), results_csv(&out.rows)?)?;
    fs::write(cfg.output.join("timings.csv"), timings_csv(&out.rows)?)?;
    let mut log = fs::File::create(cfg.output.join("failures.log"))?;
    for f in &out.failures {
        writeln!(log, "repetition={} model={} seed={}: {}", f.repetition, f.model, f.seed, f.message)?;
    }
    Ok(())
}
