//! Benchmark test functions, designs and scores.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::moments::PosteriorMoments;

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

const STEP_SCALE: f64 = 0.065;

/// `Phi((x - 0.5) / 0.065)` and its derivative.
pub fn step_fn(x: f64) -> (f64, f64) {
    let z = (x - 0.5) / STEP_SCALE;
    (norm_cdf(z), norm_pdf(z) / STEP_SCALE)
}

pub const SQUIGGLE_SIGMA: f64 = 0.1;

/// The two-dimensional squiggle function and its gradient.
pub fn squiggle_fn(x: &[f64], sigma: f64) -> Result<(f64, Vec<f64>)> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "squiggle input",
            expected: 2,
            found: x.len(),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("squiggle sigma must be positive, got {sigma}")));
    }
    let (x1, x2) = (x[0], x[1]);
    let s2 = sigma * sigma;
    let c = 1.0 / (2.0 * PI * s2).sqrt();
    let mu = 0.25 * (2.0 * PI * x1 * x1).sin() - 0.1 * x1 + 0.5;
    let dmu = PI * x1 * (2.0 * PI * x1 * x1).cos() - 0.1;
    let e = (-(x2 - mu).powi(2) / (2.0 * s2)).exp();
    let f = c * x1 * x2 * e;
    let d1 = c * x1 * x2 * e * (x2 - mu) / s2 * dmu + c * x2 * e;
    let d2 = c * x1 * x2 * e * (mu - x2) / s2 + c * x1 * e;
    Ok((f, vec![d1, d2]))
}

/// `2 Phi(sqrt(2) (-4 - 3 sum x)) - 1` on its native box `[-2, 2]^D`.
pub fn plateau_fn(x: &[f64]) -> (f64, Vec<f64>) {
    let z = SQRT_2 * (-4.0 - 3.0 * x.iter().sum::<f64>());
    let g = -6.0 * SQRT_2 * norm_pdf(z);
    (2.0 * norm_cdf(z) - 1.0, vec![g; x.len()])
}

/// Smallest admissible radius for the ignition function.
pub const IGNITION_MIN_RADIUS: f64 = 1e-9;

/// The mock ignition function `log10(r^5 (1 + 200000 t))`, `t = Phi(10 sqrt(2) (r - 2))`.
pub fn ignition_fn(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(r > IGNITION_MIN_RADIUS) {
        return Err(Error::Domain(format!("ignition function undefined at radius {r:e}")));
    }
    let a = 10.0 * SQRT_2;
    let t = norm_cdf(a * (r - 2.0));
    let q = r.powi(5) * (1.0 + 200000.0 * t);
    let grad = x
        .iter()
        .map(|&xi| {
            let dr = xi / r;
            let dt = a * norm_pdf(a * (r - 2.0)) * dr;
            let dq = r.powi(5) * (200000.0 * dt) + (1.0 + 200000.0 * t) * 5.0 * r.powi(4) * dr;
            dq / (q * std::f64::consts::LN_10)
        })
        .collect();
    Ok((q.log10(), grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Step,
    Squiggle { sigma: f64 },
    Plateau,
    Ignition,
}

/// A registered test function, evaluated on the unit cube `[0, 1]^D`.
///
/// Inputs are mapped affinely onto the function's native box and gradients
/// are returned with respect to the unit-cube coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: &'static str,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    kind: Kind,
}

pub const FUNCTION_NAMES: [&str; 4] = ["step", "squiggle", "plateau", "ignition"];

impl TestFunction {
    /// Looks up a function by name. `dim` is ignored for fixed-dimension
    /// functions; `sigma` only applies to the squiggle.
    pub fn lookup(name: &str, dim: usize, sigma: Option<f64>) -> Result<Self> {
        let (name, kind, dim, lo, hi) = match name {
            "step" => ("step", Kind::Step, 1, 0.0, 1.0),
            "squiggle" => {
                let sigma = sigma.unwrap_or(SQUIGGLE_SIGMA);
                if !(sigma > 0.0) {
                    return Err(Error::InvalidParameter(format!("squiggle sigma must be positive, got {sigma}")));
                }
                ("squiggle", Kind::Squiggle { sigma }, 2, 0.0, 1.0)
            }
            "plateau" => ("plateau", Kind::Plateau, dim, -2.0, 2.0),
            "ignition" => ("ignition", Kind::Ignition, dim, 0.0, 1.0),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown test function '{other}' (expected one of {})",
                    FUNCTION_NAMES.join(", ")
                )))
            }
        };
        if dim == 0 {
            return Err(Error::InvalidParameter(format!("{name} needs a positive dimension")));
        }
        let f = TestFunction {
            name,
            dim,
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            kind,
        };
        f.verify_gradient(16, 1e-4)?;
        Ok(f)
    }

    fn eval_native(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.kind {
            Kind::Step => {
                let (y, g) = step_fn(x[0]);
                Ok((y, vec![g]))
            }
            Kind::Squiggle { sigma } => squiggle_fn(x, sigma),
            Kind::Plateau => Ok(plateau_fn(x)),
            Kind::Ignition => ignition_fn(x),
        }
    }

    /// Response and unit-cube gradient at `u`.
    pub fn eval(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "test function input",
                expected: self.dim,
                found: u.len(),
            });
        }
        let x: Vec<f64> = (0..self.dim).map(|d| self.lower[d] + (self.upper[d] - self.lower[d]) * u[d]).collect();
        let (y, mut g) = self.eval_native(&x)?;
        for d in 0..self.dim {
            g[d] *= self.upper[d] - self.lower[d];
        }
        Ok((y, g))
    }

    /// Responses and gradients (n x D) over the rows of `u`.
    pub fn eval_rows(&self, u: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = u.nrows();
        let mut y = DVector::zeros(n);
        let mut g = DMatrix::zeros(n, self.dim);
        for i in 0..n {
            let row: Vec<f64> = u.row(i).iter().copied().collect();
            let (yi, gi) = self.eval(&row)?;
            y[i] = yi;
            for d in 0..self.dim {
                g[(i, d)] = gi[d];
            }
        }
        Ok((y, g))
    }

    /// Whether `u` lies in a region where finite differences are unreliable.
    fn near_singular(&self, u: &[f64]) -> bool {
        match self.kind {
            Kind::Ignition => {
                let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                r < 0.05 || (r - 2.0).abs() < 0.15
            }
            _ => false,
        }
    }

    /// Compares gradients with central finite differences at `count` seeded
    /// interior points.
    pub fn verify_gradient(&self, count: usize, rtol: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let h = 1e-6;
        let mut checked = 0;
        while checked < count {
            let u: Vec<f64> = (0..self.dim).map(|_| rng.random_range(0.05..0.95)).collect();
            if self.near_singular(&u) {
                continue;
            }
            checked += 1;
            let (y, g) = self.eval(&u)?;
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = 1e-7 * y.abs().max(1.0);
            for d in 0..self.dim {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[d] += h;
                dn[d] -= h;
                let fd = (self.eval(&up)?.0 - self.eval(&dn)?.0) / (2.0 * h);
                if (fd - g[d]).abs() > rtol * scale.max(fd.abs()) + floor {
                    return Err(Error::Numeric(format!(
                        "{}: gradient {d} is {} but finite difference gives {fd}",
                        self.name, g[d]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Latin hypercube sample of `n` points in `[0, 1]^D`.
pub fn lhs<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, dim);
    let mut perm: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        perm.shuffle(rng);
        for i in 0..n {
            x[(i, d)] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    x
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "rmse",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Closed-form CRPS of `N(mu, sigma^2)` against `truth`.
pub fn crps_gaussian(mu: f64, sigma: f64, truth: f64) -> f64 {
    if !(sigma > 0.0) {
        return (truth - mu).abs();
    }
    let z = (truth - mu) / sigma;
    let v = sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / PI.sqrt());
    v.max(0.0)
}

/// Mean CRPS over paired predictive means, variances and truths.
pub fn mean_crps(mean: &[f64], var: &[f64], truth: &[f64]) -> Result<f64> {
    if mean.len() != truth.len() || var.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "crps",
            expected: truth.len(),
            found: mean.len(),
        });
    }
    let s: f64 = (0..truth.len())
        .map(|i| crps_gaussian(mean[i], var[i].max(0.0).sqrt(), truth[i]))
        .sum();
    Ok(s / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub rmse_y: f64,
    pub crps_y: f64,
    /// Averaged over input dimensions.
    pub rmse_grad: Option<f64>,
    pub crps_grad: Option<f64>,
    pub runtime_s: f64,
}

/// Scores predictions against the true responses and (when both are
/// available) true gradients (`n_p x D`).
pub fn score(pred: &PosteriorMoments, truth_y: &DVector<f64>, truth_grad: Option<&DMatrix<f64>>) -> Result<ScoreReport> {
    let ym: Vec<f64> = pred.y_mean().iter().copied().collect();
    let yv: Vec<f64> = pred.y_var().iter().copied().collect();
    let rmse_y = rmse(&ym, truth_y.as_slice())?;
    let crps_y = mean_crps(&ym, &yv, truth_y.as_slice())?;
    let (mut rmse_grad, mut crps_grad) = (None, None);
    if let (Some(g), true) = (truth_grad, pred.with_gradient) {
        let (mut r, mut c) = (0.0, 0.0);
        for d in 1..=pred.dim {
            let m: Vec<f64> = pred.grad_mean(d).unwrap().iter().copied().collect();
            let v: Vec<f64> = pred.grad_var(d).unwrap().iter().copied().collect();
            let t: Vec<f64> = g.column(d - 1).iter().copied().collect();
            r += rmse(&m, &t)?;
            c += mean_crps(&m, &v, &t)?;
        }
        rmse_grad = Some(r / pred.dim as f64);
        crps_grad = Some(c / pred.dim as f64);
    }
    Ok(ScoreReport {
        rmse_y,
        crps_y,
        rmse_grad,
        crps_grad,
        runtime_s: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_values() {
        assert_eq!(step_fn(0.5).0, 0.5);
        assert!((step_fn(0.5).1 - 0.398_942_280_401_432_7 / 0.065).abs() < 1e-12);
        assert!(step_fn(0.0).0 < 1e-10);
        assert!((1.0 - step_fn(1.0).0) < 1e-10);
    }

    #[test]
    fn squiggle_zero_edges() {
        assert_eq!(squiggle_fn(&[0.0, 0.4], 0.05).unwrap().0, 0.0);
        assert_eq!(squiggle_fn(&[0.4, 0.0], 0.05).unwrap().0, 0.0);
        assert!(squiggle_fn(&[0.4, 0.4], 0.0).is_err());
    }

    #[test]
    fn plateau_center() {
        let (y, g) = plateau_fn(&[-4.0 / 9.0; 3]);
        assert!(y.abs() < 1e-15);
        assert!(g.iter().all(|&v| v == g[0]));
    }

    #[test]
    fn plateau_unit_cube_gradient() {
        let f = TestFunction::lookup("plateau", 3, None).unwrap();
        let u = [0.3, 0.2, 0.25];
        let (_, g) = f.eval(&u).unwrap();
        let x: f64 = u.iter().map(|v| 4.0 * v - 2.0).sum();
        let expected = -24.0 * SQRT_2 * norm_pdf(SQRT_2 * (-4.0 - 3.0 * x));
        assert!((g[0] - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn ignition_domain() {
        let mut x = vec![0.0; 6];
        assert!(matches!(ignition_fn(&x), Err(Error::Domain(_))));
        x[0] = 1.0;
        let (y, _) = ignition_fn(&x).unwrap();
        assert!(y.abs() < 1e-12);
    }

    #[test]
    fn crps_at_mean() {
        let c = crps_gaussian(1.0, 2.0, 1.0);
        assert!((c - 2.0 * (2.0 * norm_pdf(0.0) - 1.0 / PI.sqrt())).abs() < 1e-15);
        assert!((c / 2.0 - 0.233_695_8).abs() < 1e-6);
        assert_eq!(crps_gaussian(1.0, 0.0, 3.5), 2.5);
    }

    #[test]
    fn lhs_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = lhs(17, 3, &mut rng);
        for d in 0..3 {
            let mut bins: Vec<usize> = x.column(d).iter().map(|v| (v * 17.0).floor() as usize).collect();
            bins.sort_unstable();
            assert_eq!(bins, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn unknown_function() {
        assert!(TestFunction::lookup("rosenbrock", 2, None).is_err());
    }
}
