//! Gaussian (squared exponential) kernel and its derivative blocks.
//!
//! The kernel is `k(x, x') = exp(-sum_d (x_d - x'_d)^2 / theta_d)`. A derivative
//! index of `0` denotes the response itself and `d >= 1` the partial derivative
//! with respect to input dimension `d`. Gradient-augmented matrices are laid out
//! block-wise: all responses first, then the `d = 1` partials, and so on.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-dimension lengthscales, in squared-distance units.
#[derive(Debug, Clone, PartialEq)]
pub struct Lengthscales(Vec<f64>);

impl Lengthscales {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidParameter("empty lengthscale vector".into()));
        }
        if let Some(bad) = theta.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "lengthscales must be positive and finite, got {bad}"
            )));
        }
        Ok(Lengthscales(theta))
    }

    /// The same lengthscale replicated across `dim` dimensions.
    pub fn isotropic(theta: f64, dim: usize) -> Result<Self> {
        Self::new(vec![theta; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `0` for the response, `d` for the partial derivative along input dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DerivIndex(usize);

impl DerivIndex {
    pub const RESPONSE: DerivIndex = DerivIndex(0);

    pub fn new(value: usize, dim: usize) -> Result<Self> {
        if value > dim {
            return Err(Error::InvalidParameter(format!(
                "derivative index {value} exceeds input dimension {dim}"
            )));
        }
        Ok(DerivIndex(value))
    }

    pub fn value(self) -> usize {
        self.0
    }

    pub fn is_response(self) -> bool {
        self.0 == 0
    }

    /// `[0, 1, ..., dim]`
    pub fn all(dim: usize) -> Vec<DerivIndex> {
        (0..=dim).map(DerivIndex).collect()
    }
}

/// Row/column bookkeeping for a gradient-augmented covariance over `n` locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradCovLayout {
    pub n: usize,
    pub dim: usize,
}

impl GradCovLayout {
    pub fn new(n: usize, dim: usize) -> Self {
        GradCovLayout { n, dim }
    }

    /// `n (1 + D)`
    pub fn total(&self) -> usize {
        self.n * (1 + self.dim)
    }

    pub fn index(&self, location: usize, deriv: DerivIndex) -> usize {
        deriv.0 * self.n + location
    }
}

/// Input locations copied into row-major storage for fast pairwise access.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let (n, dim) = x.shape();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(x.row(i).iter());
        }
        Points { data, dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        Points {
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn sq_dist(&self, i: usize, other: &[f64]) -> f64 {
        self.row(i)
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn base_corr(xi: &[f64], xj: &[f64], theta: &[f64], diff: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for p in 0..theta.len() {
        let dp = xi[p] - xj[p];
        diff[p] = dp;
        s += dp * dp / theta[p];
    }
    (-s).exp()
}

/// Kernel entry `K_{df}` given `diff = x_i - x_j` and `k = K_00(x_i, x_j)`.
#[inline]
pub(crate) fn deriv_entry(d: usize, f: usize, diff: &[f64], theta: &[f64], k: f64) -> f64 {
    match (d, f) {
        (0, 0) => k,
        (d, 0) => -2.0 / theta[d - 1] * diff[d - 1] * k,
        (0, f) => 2.0 / theta[f - 1] * diff[f - 1] * k,
        (d, f) if d == f => {
            let t = theta[d - 1];
            let dd = diff[d - 1];
            2.0 / t * (1.0 - 2.0 / t * dd * dd) * k
        }
        (d, f) => -4.0 / (theta[d - 1] * theta[f - 1]) * diff[d - 1] * diff[f - 1] * k,
    }
}

/// `K_00(x_i, x_j)`.
pub fn k00(xi: &[f64], xj: &[f64], theta: &Lengthscales) -> Result<f64> {
    check_dim("k00 first point", theta.dim(), xi.len())?;
    check_dim("k00 second point", theta.dim(), xj.len())?;
    let mut diff = vec![0.0; theta.dim()];
    Ok(base_corr(xi, xj, theta.as_slice(), &mut diff))
}

/// Single kernel entry `K_{df}(x_i, x_j)`.
pub fn k_entry(
    d: DerivIndex,
    f: DerivIndex,
    xi: &[f64],
    xj: &[f64],
    theta: &Lengthscales,
) -> Result<f64> {
    check_dim("kernel first point", theta.dim(), xi.len())?;
    check_dim("kernel second point", theta.dim(), xj.len())?;
    check_index(d, theta.dim())?;
    check_index(f, theta.dim())?;
    let mut diff = vec![0.0; theta.dim()];
    let k = base_corr(xi, xj, theta.as_slice(), &mut diff);
    Ok(deriv_entry(d.0, f.0, &diff, theta.as_slice(), k))
}

fn check_index(d: DerivIndex, dim: usize) -> Result<()> {
    DerivIndex::new(d.0, dim).map(|_| ())
}

/// The `n_i x n_j` matrix with entries `K_{df}(x_a, x_b)`.
pub fn k_block(
    d: DerivIndex,
    f: DerivIndex,
    xi: &DMatrix<f64>,
    xj: &DMatrix<f64>,
    theta: &Lengthscales,
) -> Result<DMatrix<f64>> {
    assemble_cross(xi, xj, theta, &[d], &[f])
}

/// `K_{..}(X) + eps I_N`, the full gradient-augmented covariance.
pub fn assemble_grad_cov(x: &DMatrix<f64>, theta: &Lengthscales, eps: f64) -> Result<DMatrix<f64>> {
    check_dim("assemble_grad_cov", theta.dim(), x.ncols())?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter must be >= 0, got {eps}")));
    }
    Ok(cov_matrix(&Points::from_matrix(x), theta.as_slice(), true, eps))
}

/// Stacks `K_{df}(X_p, X)` blocks with `d` from `row_set` and `f` from `col_set`,
/// each in ascending order.
pub fn assemble_cross(
    xp: &DMatrix<f64>,
    x: &DMatrix<f64>,
    theta: &Lengthscales,
    row_set: &[DerivIndex],
    col_set: &[DerivIndex],
) -> Result<DMatrix<f64>> {
    check_dim("assemble_cross rows", theta.dim(), xp.ncols())?;
    check_dim("assemble_cross columns", theta.dim(), x.ncols())?;
    let rows = normalize_set(row_set, theta.dim())?;
    let cols = normalize_set(col_set, theta.dim())?;
    Ok(cross_matrix(
        &Points::from_matrix(xp),
        &Points::from_matrix(x),
        theta.as_slice(),
        &rows,
        &cols,
    ))
}

fn normalize_set(set: &[DerivIndex], dim: usize) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("empty derivative index set".into()));
    }
    let mut v = Vec::with_capacity(set.len());
    for d in set {
        check_index(*d, dim)?;
        v.push(d.0);
    }
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Derivative index set `{0}` or `{0, 1, ..., D}`.
pub(crate) fn deriv_set(dim: usize, with_grad: bool) -> Vec<usize> {
    if with_grad {
        (0..=dim).collect()
    } else {
        vec![0]
    }
}

pub(crate) fn cross_matrix(
    xp: &Points,
    x: &Points,
    theta: &[f64],
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    let (np, n) = (xp.len(), x.len());
    let mut out = DMatrix::zeros(np * rows.len(), n * cols.len());
    let mut diff = vec![0.0; theta.len()];
    for a in 0..np {
        for b in 0..n {
            let k = base_corr(xp.row(a), x.row(b), theta, &mut diff);
            for (ri, &d) in rows.iter().enumerate() {
                for (ci, &f) in cols.iter().enumerate() {
                    out[(ri * np + a, ci * n + b)] = deriv_entry(d, f, &diff, theta, k);
                }
            }
        }
    }
    out
}

/// Symmetric covariance over `x` with jitter on the whole diagonal.
pub(crate) fn cov_matrix(x: &Points, theta: &[f64], with_grad: bool, eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let set = deriv_set(x.dim(), with_grad);
    let nb = set.len();
    let mut out = DMatrix::zeros(n * nb, n * nb);
    let mut diff = vec![0.0; theta.len()];
    for a in 0..n {
        for b in 0..=a {
            let k = base_corr(x.row(a), x.row(b), theta, &mut diff);
            for &d in &set {
                for &f in &set {
                    let v = deriv_entry(d, f, &diff, theta, k);
                    out[(d * n + a, f * n + b)] = v;
                    out[(f * n + b, d * n + a)] = v;
                }
            }
        }
    }
    for i in 0..n * nb {
        out[(i, i)] += eps;
    }
    out
}

/// Diagonal of the prior covariance at `x` (no jitter): `1` for responses and
/// `2 / theta_d` for the `d`-th partial.
pub(crate) fn prior_diag(n: usize, theta: &[f64], with_grad: bool) -> Vec<f64> {
    let mut v = vec![1.0; n];
    if with_grad {
        for t in theta {
            v.extend(std::iter::repeat_n(2.0 / t, n));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ls(v: &[f64]) -> Lengthscales {
        Lengthscales::new(v.to_vec()).unwrap()
    }

    #[test]
    fn k00_basic_values() {
        assert_eq!(k00(&[0.3], &[0.3], &ls(&[1.0])).unwrap(), 1.0);
        assert!((k00(&[0.0], &[1.0], &ls(&[1.0])).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k00(&[0.0], &[1.0], &ls(&[2.0])).unwrap() - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn k00_dimension_mismatch() {
        assert!(matches!(
            k00(&[0.0, 1.0], &[1.0], &ls(&[1.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lengthscales_reject_nonpositive() {
        assert!(Lengthscales::new(vec![1.0, 0.0]).is_err());
        assert!(Lengthscales::new(vec![-1.0]).is_err());
        assert!(Lengthscales::new(vec![]).is_err());
    }

    #[test]
    fn deriv_index_out_of_range() {
        assert!(DerivIndex::new(3, 2).is_err());
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let bad = DerivIndex(2);
        assert!(k_block(bad, DerivIndex::RESPONSE, &x, &x, &ls(&[1.0])).is_err());
    }

    #[test]
    fn zero_distance_blocks() {
        let x = DMatrix::from_row_slice(1, 1, &[0.4]);
        let d1 = DerivIndex::new(1, 1).unwrap();
        let k10 = k_block(d1, DerivIndex::RESPONSE, &x, &x, &ls(&[2.0])).unwrap();
        assert_eq!(k10[(0, 0)], 0.0);
        let k11 = k_block(d1, d1, &x, &x, &ls(&[2.0])).unwrap();
        assert!((k11[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_point_grad_cov() {
        let x = DMatrix::from_row_slice(1, 1, &[0.7]);
        let k = assemble_grad_cov(&x, &ls(&[1.0]), 0.0).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn first_derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let theta = ls(&[rng.random_range(0.1..3.0)]);
            let xi = rng.random_range(0.0..1.0);
            let xj = rng.random_range(0.0..1.0);
            let analytic = k_entry(DerivIndex(1), DerivIndex(0), &[xi], &[xj], &theta).unwrap();
            let fd = (k00(&[xi + h], &[xj], &theta).unwrap() - k00(&[xi - h], &[xj], &theta).unwrap())
                / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-6 * analytic.abs().max(1e-3),
                "{analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn grad_cov_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let k = assemble_grad_cov(&x, &ls(&[0.3, 0.8]), 1e-8).unwrap();
        assert_eq!((&k - k.transpose()).amax(), 0.0);
        let eig = k.symmetric_eigenvalues();
        assert!(eig.min() >= 0.0, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn cross_reduces_to_k00_and_counts_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(4, 1, |_, _| rng.random::<f64>());
        let theta = ls(&[0.5]);
        let r = DerivIndex::RESPONSE;
        let c = assemble_cross(&x, &x, &theta, &[r], &[r]).unwrap();
        assert_eq!(c, k_block(r, r, &x, &x, &theta).unwrap());
        let c2 = assemble_cross(&x, &x, &theta, &[r, DerivIndex(1)], &[r]).unwrap();
        assert_eq!(c2.nrows(), 8);
    }

    #[test]
    fn cross_transpose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xp = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let theta = ls(&[0.4, 1.3]);
        let rows = DerivIndex::all(2);
        let cols = [DerivIndex(0), DerivIndex(2)];
        let a = assemble_cross(&xp, &x, &theta, &rows, &cols).unwrap();
        let b = assemble_cross(&x, &xp, &theta, &cols, &rows).unwrap();
        assert!((a - b.transpose()).amax() < 1e-15);
    }
}
