//! Reference computations for the integration tests, written against the
//! textbook formulas rather than the library's internals.
#![allow(dead_code)]

use gradgp::{FitSettings, GpChain, TrainingSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `exp(-sum (a - b)^2 / theta)`.
pub fn rbf(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(theta).map(|((x, y), t)| (x - y) * (x - y) / t).sum();
    (-s).exp()
}

/// Covariance between partial `d` at `a` and partial `f` at `b` (0 is the value).
pub fn cov_df(d: usize, f: usize, a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let k = rbf(a, b, theta);
    let r = |i: usize| a[i - 1] - b[i - 1];
    let g = |i: usize| 2.0 / theta[i - 1];
    match (d, f) {
        (0, 0) => k,
        (d, 0) => -g(d) * r(d) * k,
        (0, f) => g(f) * r(f) * k,
        (d, f) => ((if d == f { g(d) } else { 0.0 }) - g(d) * g(f) * r(d) * r(f)) * k,
    }
}

/// `(location, partial)` pairs in block order: all values, then each partial block.
pub fn layout(n: usize, blocks: usize) -> Vec<(usize, usize)> {
    (0..=blocks).flat_map(|d| (0..n).map(move |i| (i, d))).collect()
}

pub fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

pub fn joint(
    xa: &DMatrix<f64>,
    ia: &[(usize, usize)],
    xb: &DMatrix<f64>,
    ib: &[(usize, usize)],
    theta: &[f64],
) -> DMatrix<f64> {
    DMatrix::from_fn(ia.len(), ib.len(), |r, c| {
        let (i, d) = ia[r];
        let (j, f) = ib[c];
        cov_df(d, f, &row(xa, i), &row(xb, j), theta)
    })
}

/// Zero-mean conditioning of the targets `(xp, ip)` on `values` observed at
/// `(x, it)`: returns the mean, the unit-scale covariance and `v^T K^{-1} v / N`.
pub fn condition(
    x: &DMatrix<f64>,
    it: &[(usize, usize)],
    values: &DVector<f64>,
    xp: &DMatrix<f64>,
    ip: &[(usize, usize)],
    theta: &[f64],
    eps: f64,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let k = joint(x, it, x, it, theta) + DMatrix::identity(it.len(), it.len()) * eps;
    let chol = k.cholesky().expect("positive definite training covariance");
    let kpt = joint(xp, ip, x, it, theta);
    let kpp = joint(xp, ip, xp, ip, theta);
    let alpha = chol.solve(values);
    let mean = &kpt * &alpha;
    let cov = kpp - &kpt * chol.solve(&kpt.transpose());
    let q = values.dot(&alpha) / values.len() as f64;
    (mean, cov, q)
}

/// Mean and covariance of a (ge)GP with lengthscales `theta`, on the block layout
/// `[y; dy/dx1; ...]` when `want_grad`.
pub fn gp_oracle(
    data: &TrainingSet,
    ge: bool,
    xp: &DMatrix<f64>,
    want_grad: bool,
    theta: &[f64],
    eps: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, dim) = data.x.shape();
    let c = data.y.mean();
    let it = layout(n, if ge { dim } else { 0 });
    let values = DVector::from_fn(it.len(), |r, _| {
        let (i, d) = it[r];
        if d == 0 {
            data.y[i] - c
        } else {
            data.grad.as_ref().unwrap()[(i, d - 1)]
        }
    });
    let ip = layout(xp.nrows(), if want_grad { dim } else { 0 });
    let (mut mean, cov, tau2) = condition(&data.x, &it, &values, xp, &ip, theta, eps);
    for r in 0..xp.nrows() {
        mean[r] += c;
    }
    (mean, cov * tau2)
}

/// Mixture moments over iterations: mean of means, mean variance plus the
/// population variance of the means.
pub fn pool(per_t: &[(DVector<f64>, DVector<f64>)]) -> (DVector<f64>, DVector<f64>) {
    let t = per_t.len() as f64;
    let mut m = DVector::zeros(per_t[0].0.len());
    for (a, _) in per_t {
        m += a;
    }
    m /= t;
    let mut v = DVector::zeros(m.len());
    for (a, b) in per_t {
        v += b + (a - &m).component_mul(&(a - &m));
    }
    (m, v / t)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn uniform_matrix<R: Rng>(rng: &mut R, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random::<f64>())
}

/// Points at least `gap` apart, drawn by rejection in the unit cube.
pub fn spread_points<R: Rng>(rng: &mut R, n: usize, d: usize, gap: f64) -> DMatrix<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..100_000 {
        if rows.len() == n {
            break;
        }
        let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let ok = rows
            .iter()
            .all(|q| q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= gap * gap);
        if ok {
            rows.push(p);
        }
    }
    assert_eq!(rows.len(), n, "cannot place {n} points {gap} apart");
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

/// Smooth synthetic responses with analytic gradients.
pub fn synthetic(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let y = DVector::from_fn(n, |i, _| (0..d).map(|j| (3.0 * x[(i, j)] + j as f64).sin()).sum::<f64>());
    let g = DMatrix::from_fn(n, d, |i, j| 3.0 * (3.0 * x[(i, j)] + j as f64).cos());
    (y, g)
}

pub fn pinned_gp(data: &TrainingSet, ge: bool, thetas: Vec<Vec<f64>>, settings: FitSettings) -> GpChain {
    GpChain::from_thetas(data.clone(), ge, settings, thetas, None).unwrap()
}

/// Mean and batch-means standard error of a correlated sequence.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let s2 = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64;
    (xs.iter().sum::<f64>() / xs.len() as f64, (s2 / batches as f64).sqrt())
}

/// Central difference of `f` at `x` along coordinate `j`.
pub fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], j: usize, h: f64) -> f64 {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[j] += h;
    b[j] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

/// One iteration of DGP prediction by explicit two-stage conditioning: the
/// kriged mean warp of `xp`, then outer kriging on the warped inputs, with
/// gradients mapped back through the predicted Jacobian entrywise.
#[allow(clippy::too_many_arguments)]
pub fn dgp_oracle(
    data: &TrainingSet,
    ge: bool,
    identity_mean: bool,
    w: &DMatrix<f64>,
    theta_w: &[f64],
    theta_y: f64,
    xp: &DMatrix<f64>,
    want_grad: bool,
    eps: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (n, dim) = data.x.shape();
    let n_p = xp.nrows();
    let it = layout(n, if ge { dim } else { 0 });
    let ip = layout(n_p, if want_grad { dim } else { 0 });
    let prior = |pts: &DMatrix<f64>, idx: &[(usize, usize)], d: usize| {
        DVector::from_fn(idx.len(), |r, _| {
            let (i, f) = idx[r];
            match (identity_mean, f) {
                (false, _) => 0.0,
                (true, 0) => pts[(i, d)],
                (true, f) => f64::from(f == d + 1),
            }
        })
    };
    let mut warp = DMatrix::zeros(ip.len(), dim);
    for d in 0..dim {
        let resid = w.column(d) - prior(&data.x, &it, d);
        let (m, _, _) = condition(&data.x, &it, &resid, xp, &ip, &vec![theta_w[d]; dim], eps);
        warp.set_column(d, &(m + prior(xp, &ip, d)));
    }

    let c = data.y.mean();
    let mut values = DVector::zeros(it.len());
    for i in 0..n {
        values[i] = data.y[i] - c;
    }
    if ge {
        let g = data.grad.as_ref().unwrap();
        for i in 0..n {
            let jac = DMatrix::from_fn(dim, dim, |f, d| w[((f + 1) * n + i, d)]);
            let gx = DVector::from_fn(dim, |f, _| g[(i, f)]);
            let gw = jac.lu().solve(&gx).unwrap();
            for d in 0..dim {
                values[(d + 1) * n + i] = gw[d];
            }
        }
    }
    let wt = w.rows(0, n).into_owned();
    let wp = warp.rows(0, n_p).into_owned();
    let (mut mean, cov, q) = condition(&wt, &it, &values, &wp, &ip, &vec![theta_y; dim], eps);
    let mut var = cov.diagonal() * q;
    for j in 0..n_p {
        mean[j] += c;
    }
    if want_grad {
        let (m0, v0) = (mean.clone(), var.clone());
        for j in 0..n_p {
            for f in 0..dim {
                let (mut sm, mut sv) = (0.0, 0.0);
                for d in 0..dim {
                    let a = warp[((f + 1) * n_p + j, d)];
                    sm += a * m0[(d + 1) * n_p + j];
                    sv += a * a * v0[(d + 1) * n_p + j];
                }
                mean[(f + 1) * n_p + j] = sm;
                var[(f + 1) * n_p + j] = sv;
            }
        }
    }
    (mean, var)
}
