//! Dense multivariate-normal primitives: jittered Cholesky, kriging
//! (conditioning), the scale-integrated log-likelihood and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Lower-triangular `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
    logdet: f64,
}

impl CholFactor {
    /// Wraps an existing lower-triangular factor. Entries above the diagonal are ignored.
    pub fn from_lower(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::DimensionMismatch {
                context: "cholesky factor",
                expected: l.nrows(),
                found: l.ncols(),
            });
        }
        let l = l.lower_triangle();
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(CholFactor { l, logdet })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `log |A|`
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// `L^{-1} b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L^{-1} B`
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// `A^{-1} b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = self.solve_lower(b);
        self.l.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// `b^T A^{-1} b`
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }
}

/// Factor `A + eps I`. Fails rather than escalating the jitter.
pub fn chol_jitter(a: &DMatrix<f64>, eps: f64) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "chol_jitter",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let mut a = a.clone();
    if eps != 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += eps;
        }
    }
    factor(a)
}

/// Factor a matrix that already carries its jitter.
pub(crate) fn factor(a: DMatrix<f64>) -> Result<CholFactor> {
    let order = a.nrows();
    let chol = nalgebra::Cholesky::new(a).ok_or(Error::NotPositiveDefinite { order })?;
    let l = chol.unpack();
    let mut logdet = 0.0;
    for i in 0..order {
        let v = l[(i, i)];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NotPositiveDefinite { order });
        }
        logdet += v.ln();
    }
    Ok(CholFactor {
        l,
        logdet: 2.0 * logdet,
    })
}

/// Predictive covariance, either full or diagonal-only ("lite").
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diag(DVector<f64>),
}

impl Covariance {
    pub fn variances(&self) -> DVector<f64> {
        match self {
            Covariance::Full(m) => m.diagonal(),
            Covariance::Diag(v) => v.clone(),
        }
    }

    pub fn is_lite(&self) -> bool {
        matches!(self, Covariance::Diag(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondResult {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

fn check_condition_dims(
    np: usize,
    kpt: &DMatrix<f64>,
    chol: &CholFactor,
    y: &DVector<f64>,
) -> Result<()> {
    if kpt.nrows() != np {
        return Err(Error::DimensionMismatch {
            context: "mvn_condition predictive rows",
            expected: np,
            found: kpt.nrows(),
        });
    }
    if kpt.ncols() != chol.dim() {
        return Err(Error::DimensionMismatch {
            context: "mvn_condition training columns",
            expected: chol.dim(),
            found: kpt.ncols(),
        });
    }
    if y.len() != chol.dim() {
        return Err(Error::DimensionMismatch {
            context: "mvn_condition response",
            expected: chol.dim(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Kriging with full predictive covariance.
///
/// `mean = K_pt (K_tt + eps I)^{-1} y`,
/// `cov = tau2 (K_pp - K_pt (K_tt + eps I)^{-1} K_tp)`,
/// where `ktt_chol` factors `K_tt + eps I`.
pub fn mvn_condition(
    kpp: &DMatrix<f64>,
    kpt: &DMatrix<f64>,
    ktt_chol: &CholFactor,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<CondResult> {
    if !kpp.is_square() {
        return Err(Error::DimensionMismatch {
            context: "mvn_condition predictive covariance",
            expected: kpp.nrows(),
            found: kpp.ncols(),
        });
    }
    check_condition_dims(kpp.nrows(), kpt, ktt_chol, y)?;
    let v = ktt_chol.solve_lower_mat(&kpt.transpose());
    let mean = v.tr_mul(&ktt_chol.solve_lower(y));
    let mut cov = kpp - v.tr_mul(&v);
    cov = (&cov + cov.transpose()) * 0.5;
    cov *= tau2;
    for i in 0..cov.nrows() {
        if cov[(i, i)] < 0.0 {
            cov[(i, i)] = 0.0;
        }
    }
    Ok(CondResult {
        mean,
        cov: Covariance::Full(cov),
    })
}

/// Kriging with only the predictive variances.
pub fn mvn_condition_lite(
    kpp_diag: &DVector<f64>,
    kpt: &DMatrix<f64>,
    ktt_chol: &CholFactor,
    y: &DVector<f64>,
    tau2: f64,
) -> Result<CondResult> {
    check_condition_dims(kpp_diag.len(), kpt, ktt_chol, y)?;
    let v = ktt_chol.solve_lower_mat(&kpt.transpose());
    let mean = v.tr_mul(&ktt_chol.solve_lower(y));
    let var = DVector::from_iterator(
        kpp_diag.len(),
        v.column_iter()
            .zip(kpp_diag.iter())
            .map(|(col, kpp)| (tau2 * (kpp - col.norm_squared())).max(0.0)),
    );
    Ok(CondResult {
        mean,
        cov: Covariance::Diag(var),
    })
}

/// Kriging mean only.
pub(crate) fn condition_mean(
    kpt: &DMatrix<f64>,
    ktt_chol: &CholFactor,
    y: &DVector<f64>,
) -> DVector<f64> {
    kpt * ktt_chol.solve(y)
}

/// Log-likelihood with the scale integrated out under the `1/tau2` reference
/// prior, up to an additive constant:
/// `-1/2 log|K + eps I| - N/2 log(y^T (K + eps I)^{-1} y)`.
pub fn loglik_profiled(k_chol: &CholFactor, y: &DVector<f64>) -> Result<f64> {
    check_len(k_chol, y)?;
    let q = k_chol.quad_form(y);
    profiled_from_parts(k_chol.logdet(), q, y.len())
}

pub(crate) fn profiled_from_parts(logdet: f64, quad: f64, n: usize) -> Result<f64> {
    if !(quad > 0.0 && quad.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-positive quadratic form {quad} in profiled likelihood"
        )));
    }
    Ok(-0.5 * logdet - 0.5 * n as f64 * quad.ln())
}

/// Zero-mean Gaussian log-density with unit scale, without the `2 pi` constant:
/// `-1/2 log|K + eps I| - 1/2 y^T (K + eps I)^{-1} y`.
pub fn log_density(k_chol: &CholFactor, y: &DVector<f64>) -> Result<f64> {
    check_len(k_chol, y)?;
    Ok(-0.5 * k_chol.logdet() - 0.5 * k_chol.quad_form(y))
}

/// `y^T (K + eps I)^{-1} y / N`
pub fn tau2_hat(k_chol: &CholFactor, y: &DVector<f64>) -> Result<f64> {
    check_len(k_chol, y)?;
    Ok(k_chol.quad_form(y) / y.len() as f64)
}

fn check_len(chol: &CholFactor, y: &DVector<f64>) -> Result<()> {
    if chol.dim() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "factor vs response length",
            expected: chol.dim(),
            found: y.len(),
        });
    }
    Ok(())
}

/// `mean + L z` with `z` i.i.d. standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol: &CholFactor,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(chol.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + chol.lower() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_scalar_factors() {
        let c = chol_jitter(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(c.lower(), &DMatrix::<f64>::identity(3, 3));
        let c = chol_jitter(&DMatrix::from_element(1, 1, 4.0), 0.0).unwrap();
        assert_eq!(c.lower()[(0, 0)], 2.0);
        assert!((c.logdet() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            chol_jitter(&a, 0.0),
            Err(Error::NotPositiveDefinite { order: 2 })
        ));
    }

    #[test]
    fn profiled_single_point_is_zero() {
        let eps = 1e-8;
        let c = chol_jitter(&DMatrix::from_element(1, 1, 1.0), eps).unwrap();
        let ll = loglik_profiled(&c, &DVector::from_element(1, 1.0)).unwrap();
        assert!(ll.abs() < 1e-15);
    }

    #[test]
    fn profiled_scaling_shift() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let c = chol_jitter(&a, 0.0).unwrap();
        let y = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let base = loglik_profiled(&c, &y).unwrap();
        let scaled = loglik_profiled(&c, &(&y * 3.0)).unwrap();
        assert!((scaled - base + 1.5 * 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_response_is_a_numeric_error() {
        let c = chol_jitter(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert!(loglik_profiled(&c, &DVector::zeros(2)).is_err());
        assert_eq!(tau2_hat(&c, &DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn tau2_hat_identity() {
        let c = chol_jitter(&DMatrix::identity(4, 4), 0.0).unwrap();
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        assert!((tau2_hat(&c, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_from_zero_factor_is_mean() {
        let c = CholFactor::from_lower(DMatrix::zeros(3, 3)).unwrap();
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mvn_sample(&mean, &c, &mut rng), mean);
    }

    #[test]
    fn lite_and_full_agree() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let c = chol_jitter(&a, 1e-8).unwrap();
        let kpt = DMatrix::from_row_slice(3, 2, &[0.9, 0.2, 0.5, 0.5, 0.1, 0.8]);
        let kpp = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.6, 0.2, 0.6, 1.0]);
        let y = DVector::from_vec(vec![1.0, -0.5]);
        let full = mvn_condition(&kpp, &kpt, &c, &y, 2.0).unwrap();
        let lite = mvn_condition_lite(&kpp.diagonal(), &kpt, &c, &y, 2.0).unwrap();
        assert!((&full.mean - &lite.mean).amax() < 1e-14);
        assert!((full.cov.variances() - lite.cov.variances()).amax() < 1e-14);
    }

    #[test]
    fn condition_dimension_mismatch() {
        let c = chol_jitter(&DMatrix::identity(2, 2), 0.0).unwrap();
        let kpt = DMatrix::zeros(1, 3);
        let r = mvn_condition_lite(&DVector::zeros(1), &kpt, &c, &DVector::zeros(2), 1.0);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
