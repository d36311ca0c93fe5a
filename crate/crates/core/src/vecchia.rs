//! Vecchia approximation with gradient observations.
//!
//! Observations are `(location, derivative index)` pairs. All responses are
//! ordered first in a random permutation; each derivative block then follows in
//! the same permutation. Conditioning sets are the `m` nearest earlier
//! observations by base-location distance, with ties resolved in favour of
//! responses, then lower derivative dimension, then earlier position.
//!
//! The joint density factors into univariate conditionals
//! `y_i | y_{c_i} ~ N(b_i^T y_{c_i}, tau2 d_i)`, which is the column-wise
//! description of an upper-triangular `U` with `K^{-1} ~ U U^T`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, CholFactor, CondResult, Covariance};
use crate::kernel::{base_corr, deriv_entry, Points};

/// One observation: the response (`deriv == 0`) or a partial derivative at a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Obs {
    pub loc: usize,
    pub deriv: usize,
}

impl Obs {
    /// Position in the block-stacked `[y; dy/dx1; ...]` vector over `n` locations.
    pub fn stacked_index(self, n: usize) -> usize {
        self.deriv * n + self.loc
    }
}

/// Random response permutation followed by `blocks` derivative blocks in the same permutation.
pub fn order_grad<R: Rng + ?Sized>(n: usize, blocks: usize, rng: &mut R) -> Vec<Obs> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    (0..=blocks)
        .flat_map(|deriv| perm.iter().map(move |&loc| Obs { loc, deriv }))
        .collect()
}

#[derive(Clone, Copy)]
struct Candidate {
    sq_dist: f64,
    deriv: usize,
    position: usize,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.sq_dist
        .total_cmp(&b.sq_dist)
        .then((a.deriv > 0).cmp(&(b.deriv > 0)))
        .then(a.deriv.cmp(&b.deriv))
        .then(a.position.cmp(&b.position))
}

fn nearest(mut cands: Vec<Candidate>, m: usize) -> Vec<usize> {
    if cands.len() > m {
        cands.select_nth_unstable_by(m, candidate_order);
        cands.truncate(m);
    }
    cands.sort_by(candidate_order);
    cands.into_iter().map(|c| c.position).collect()
}

/// For each ordered position, the `m` nearest earlier positions (nearest first).
pub fn cond_sets(order: &[Obs], locations: &Points, m: usize) -> Result<Vec<Vec<usize>>> {
    if m < 1 {
        return Err(Error::InvalidParameter("conditioning budget m must be >= 1".into()));
    }
    if let Some(o) = order.iter().find(|o| o.loc >= locations.len()) {
        return Err(Error::InvalidParameter(format!(
            "observation location {} out of range for {} locations",
            o.loc,
            locations.len()
        )));
    }
    Ok((0..order.len())
        .map(|p| {
            let here = locations.row(order[p].loc);
            let cands = (0..p)
                .map(|q| Candidate {
                    sq_dist: locations.sq_dist(order[q].loc, here),
                    deriv: order[q].deriv,
                    position: q,
                })
                .collect();
            nearest(cands, m)
        })
        .collect())
}

/// Ordering and conditioning structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecchiaPlan {
    order: Vec<Obs>,
    cond: Vec<Vec<usize>>,
    m: usize,
    n: usize,
}

impl VecchiaPlan {
    /// Random ordering over `locations` with `blocks` derivative blocks (0 or D).
    pub fn build<R: Rng + ?Sized>(
        locations: &Points,
        blocks: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let order = order_grad(locations.len(), blocks, rng);
        Self::from_order(order, locations, m)
    }

    pub fn from_order(order: Vec<Obs>, locations: &Points, m: usize) -> Result<Self> {
        let cond = cond_sets(&order, locations, m)?;
        Ok(VecchiaPlan {
            order,
            cond,
            m,
            n: locations.len(),
        })
    }

    pub fn order(&self) -> &[Obs] {
        &self.order
    }

    pub fn cond(&self) -> &[Vec<usize>] {
        &self.cond
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_locations(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Number of derivative blocks carried by the plan.
    pub fn blocks(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.order.len() / self.n - 1
        }
    }

    /// Errors unless the plan covers `n` locations with `blocks` derivative blocks.
    pub fn check_layout(&self, n: usize, blocks: usize) -> Result<()> {
        if self.n != n || self.order.len() != n * (1 + blocks) {
            return Err(Error::DimensionMismatch {
                context: "vecchia plan layout",
                expected: n * (1 + blocks),
                found: self.order.len(),
            });
        }
        Ok(())
    }

    /// Text table with one row per ordered position.
    pub fn dump(&self) -> String {
        let mut s = String::from("position\tlocation\tderiv\tconditioning\n");
        for (p, (o, c)) in self.order.iter().zip(&self.cond).enumerate() {
            let cs: Vec<String> = c.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{p}\t{}\t{}\t{}", o.loc, o.deriv, cs.join(","));
        }
        s
    }
}

/// Column-wise description of the sparse upper factor `U` (`K^{-1} ~ U U^T`):
/// column `i` holds `1 / sqrt(d_i)` on the diagonal and `-b_i / sqrt(d_i)` at rows `c_i`.
#[derive(Debug, Clone)]
pub struct SparseUFactor {
    coef: Vec<DVector<f64>>,
    cond_var: Vec<f64>,
}

#[inline]
fn obs_cov(a: Obs, b: Obs, points: &Points, theta: &[f64], diff: &mut [f64]) -> f64 {
    let k = base_corr(points.row(a.loc), points.row(b.loc), theta, diff);
    deriv_entry(a.deriv, b.deriv, diff, theta, k)
}

fn local_cov(cond: &[Obs], points: &Points, theta: &[f64], eps: f64) -> DMatrix<f64> {
    let mut diff = vec![0.0; theta.len()];
    let c = cond.len();
    let mut kcc = DMatrix::zeros(c, c);
    for a in 0..c {
        for b in 0..=a {
            let v = obs_cov(cond[a], cond[b], points, theta, &mut diff);
            kcc[(a, b)] = v;
            kcc[(b, a)] = v;
        }
        kcc[(a, a)] += eps;
    }
    kcc
}

impl SparseUFactor {
    /// Computes every conditional of the plan under kernel `theta` with locations `points`.
    pub fn build(plan: &VecchiaPlan, points: &Points, theta: &[f64], eps: f64) -> Result<Self> {
        if points.len() != plan.n {
            return Err(Error::DimensionMismatch {
                context: "vecchia locations",
                expected: plan.n,
                found: points.len(),
            });
        }
        if theta.len() != points.dim() {
            return Err(Error::DimensionMismatch {
                context: "vecchia lengthscales",
                expected: points.dim(),
                found: theta.len(),
            });
        }
        let parts: Vec<Result<(DVector<f64>, f64)>> = (0..plan.order.len())
            .into_par_iter()
            .map(|i| {
                let target = plan.order[i];
                let cond: Vec<Obs> = plan.cond[i].iter().map(|&q| plan.order[q]).collect();
                let mut diff = vec![0.0; theta.len()];
                let kii = obs_cov(target, target, points, theta, &mut diff) + eps;
                if cond.is_empty() {
                    return Ok((DVector::zeros(0), kii));
                }
                let kcc = local_cov(&cond, points, theta, eps);
                let kci =
                    DVector::from_fn(cond.len(), |a, _| obs_cov(cond[a], target, points, theta, &mut diff));
                let chol = gauss::factor(kcc)?;
                let b = chol.solve(&kci);
                let d = kii - kci.dot(&b);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::NotPositiveDefinite { order: cond.len() + 1 });
                }
                Ok((b, d))
            })
            .collect();
        let mut coef = Vec::with_capacity(parts.len());
        let mut cond_var = Vec::with_capacity(parts.len());
        for p in parts {
            let (b, d) = p?;
            coef.push(b);
            cond_var.push(d);
        }
        Ok(SparseUFactor { coef, cond_var })
    }

    /// Approximate `log |K + eps I|`.
    pub fn logdet(&self) -> f64 {
        self.cond_var.iter().map(|d| d.ln()).sum()
    }

    fn residuals(&self, plan: &VecchiaPlan, y: &DVector<f64>) -> impl Iterator<Item = f64> + '_ {
        let n = plan.n;
        let vals: Vec<f64> = plan.order.iter().map(|o| y[o.stacked_index(n)]).collect();
        let cond = plan.cond.clone();
        (0..vals.len()).map(move |i| {
            let pred: f64 = cond[i]
                .iter()
                .zip(self.coef[i].iter())
                .map(|(&q, b)| b * vals[q])
                .sum();
            vals[i] - pred
        })
    }

    /// Approximate `y^T (K + eps I)^{-1} y` for a block-stacked `y`.
    pub fn quad_form(&self, plan: &VecchiaPlan, y: &DVector<f64>) -> f64 {
        self.residuals(plan, y)
            .zip(&self.cond_var)
            .map(|(r, d)| r * r / d)
            .sum()
    }

    pub fn loglik_profiled(&self, plan: &VecchiaPlan, y: &DVector<f64>) -> Result<f64> {
        self.check_len(y)?;
        gauss::profiled_from_parts(self.logdet(), self.quad_form(plan, y), y.len())
    }

    /// Unit-scale zero-mean log-density without the `2 pi` constant.
    pub fn log_density(&self, plan: &VecchiaPlan, y: &DVector<f64>) -> Result<f64> {
        self.check_len(y)?;
        Ok(-0.5 * self.logdet() - 0.5 * self.quad_form(plan, y))
    }

    pub fn tau2_hat(&self, plan: &VecchiaPlan, y: &DVector<f64>) -> Result<f64> {
        self.check_len(y)?;
        Ok(self.quad_form(plan, y) / y.len() as f64)
    }

    fn check_len(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.cond_var.len() {
            return Err(Error::DimensionMismatch {
                context: "vecchia response length",
                expected: self.cond_var.len(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// Zero-mean draw from the approximate prior, block-stacked.
    pub fn sample<R: Rng + ?Sized>(&self, plan: &VecchiaPlan, rng: &mut R) -> DVector<f64> {
        let total = plan.order.len();
        let mut vals = vec![0.0; total];
        for i in 0..total {
            let pred: f64 = plan.cond[i]
                .iter()
                .zip(self.coef[i].iter())
                .map(|(&q, b)| b * vals[q])
                .sum();
            let z: f64 = rng.sample(StandardNormal);
            vals[i] = pred + self.cond_var[i].sqrt() * z;
        }
        let mut out = DVector::zeros(total);
        for (o, v) in plan.order.iter().zip(vals) {
            out[o.stacked_index(plan.n)] = v;
        }
        out
    }

    /// Stored nonzeros of `U`.
    pub fn nnz(&self) -> usize {
        self.coef.iter().map(|b| b.len() + 1).sum()
    }

    /// Dense `U` indexed by ordered position.
    pub fn to_dense_u(&self, plan: &VecchiaPlan) -> DMatrix<f64> {
        let total = self.cond_var.len();
        let mut u = DMatrix::zeros(total, total);
        for i in 0..total {
            let s = self.cond_var[i].sqrt();
            u[(i, i)] = 1.0 / s;
            for (&q, b) in plan.cond[i].iter().zip(self.coef[i].iter()) {
                u[(q, i)] = -b / s;
            }
        }
        u
    }
}

/// Profiled log-likelihood of a block-stacked `y` under the plan.
pub fn vecchia_loglik(
    plan: &VecchiaPlan,
    theta: &[f64],
    eps: f64,
    points: &Points,
    y: &DVector<f64>,
) -> Result<f64> {
    SparseUFactor::build(plan, points, theta, eps)?.loglik_profiled(plan, y)
}

/// Inputs for per-location Vecchia prediction.
pub struct VecchiaPredictor<'a> {
    pub plan: &'a VecchiaPlan,
    /// Training locations used both for neighbour search and for the kernel.
    pub points: &'a Points,
    /// Block-stacked training values matching the plan's observations.
    pub values: &'a DVector<f64>,
    pub theta: &'a [f64],
    pub eps: f64,
    pub tau2: f64,
}

impl VecchiaPredictor<'_> {
    fn neighbours(&self, here: &[f64]) -> Vec<Obs> {
        let cands = self
            .plan
            .order
            .iter()
            .enumerate()
            .map(|(q, o)| Candidate {
                sq_dist: self.points.sq_dist(o.loc, here),
                deriv: o.deriv,
                position: q,
            })
            .collect();
        nearest(cands, self.plan.m)
            .into_iter()
            .map(|q| self.plan.order[q])
            .collect()
    }

    fn predict_location(&self, here: &[f64], want_gradient: bool) -> Result<CondResult> {
        let dim = self.points.dim();
        let targets = if want_gradient { dim + 1 } else { 1 };
        let cond = self.neighbours(here);
        let c = cond.len();
        let n = self.plan.n;
        let theta = self.theta;

        let kcc = local_cov(&cond, self.points, theta, self.eps);
        let chol: CholFactor = gauss::factor(kcc)?;
        let yc = DVector::from_iterator(c, cond.iter().map(|o| self.values[o.stacked_index(n)]));
        let alpha = chol.solve(&yc);
        let mut diff = vec![0.0; dim];
        let mut mean = DVector::zeros(targets);
        let mut var = DVector::zeros(targets);
        for t in 0..targets {
            let kct = DVector::from_fn(c, |a, _| {
                let k = base_corr(self.points.row(cond[a].loc), here, theta, &mut diff);
                deriv_entry(cond[a].deriv, t, &diff, theta, k)
            });
            mean[t] = kct.dot(&alpha);
            let prior = deriv_entry(t, t, &vec![0.0; dim], theta, 1.0);
            let v = chol.solve_lower(&kct);
            var[t] = (self.tau2 * (prior - v.norm_squared())).max(0.0);
        }
        Ok(CondResult {
            mean,
            cov: Covariance::Diag(var),
        })
    }

    /// One `CondResult` per predictive row, each over `[y, dy/dx1, ..., dy/dxD]`
    /// (or just `[y]`).
    pub fn predict(&self, xp: &Points, want_gradient: bool) -> Result<Vec<CondResult>> {
        if xp.dim() != self.points.dim() {
            return Err(Error::DimensionMismatch {
                context: "vecchia predictive locations",
                expected: self.points.dim(),
                found: xp.dim(),
            });
        }
        (0..xp.len())
            .into_par_iter()
            .map(|p| self.predict_location(xp.row(p), want_gradient))
            .collect()
    }
}

/// Per-location results re-stacked into the block layout `[y; dy/dx1; ...]`.
pub fn stack_rows(rows: &[CondResult]) -> CondResult {
    let np = rows.len();
    let blocks = rows.first().map_or(1, |r| r.mean.len());
    let mut mean = DVector::zeros(np * blocks);
    let mut var = DVector::zeros(np * blocks);
    for (p, r) in rows.iter().enumerate() {
        let v = r.cov.variances();
        for b in 0..blocks {
            mean[b * np + p] = r.mean[b];
            var[b * np + p] = v[b];
        }
    }
    CondResult {
        mean,
        cov: Covariance::Diag(var),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn figure4() -> (Vec<Obs>, Points) {
        let xs = [0.0, 0.125, 0.5, 0.875, 1.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let order = (0..2)
            .flat_map(|deriv| (0..5).map(move |loc| Obs { loc, deriv }))
            .collect();
        (order, Points::from_rows(&rows))
    }

    #[test]
    fn ordering_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = order_grad(5, 1, &mut rng);
        assert_eq!(o.len(), 10);
        for i in 0..5 {
            assert_eq!(o[i].deriv, 0);
            assert_eq!(o[i + 5], Obs { loc: o[i].loc, deriv: 1 });
        }
        let plain = order_grad(7, 0, &mut rng);
        let mut locs: Vec<usize> = plain.iter().map(|o| o.loc).collect();
        locs.sort();
        assert_eq!(locs, (0..7).collect::<Vec<_>>());
        assert_eq!(order_grad(4, 3, &mut rng).len(), 16);
    }

    #[test]
    fn figure4_tie_prefers_responses() {
        let (order, pts) = figure4();
        let c = cond_sets(&order, &pts, 3).unwrap();
        // dy3/dx (position 7) ties y2, y4 and dy2/dx at equal distance.
        assert_eq!(c[7], vec![2, 1, 3]);
        // dy2/dx picks dy1/dx over the farther y3.
        assert_eq!(c[6], vec![1, 0, 5]);
        assert!(c[0].is_empty());
    }

    #[test]
    fn budget_must_be_positive() {
        let (order, pts) = figure4();
        assert!(cond_sets(&order, &pts, 0).is_err());
    }

    #[test]
    fn full_budget_conditions_on_everything_earlier() {
        let (order, pts) = figure4();
        let c = cond_sets(&order, &pts, 100).unwrap();
        for (p, set) in c.iter().enumerate() {
            let mut s = set.clone();
            s.sort();
            assert_eq!(s, (0..p).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dump_has_one_row_per_position() {
        let (order, pts) = figure4();
        let plan = VecchiaPlan::from_order(order, &pts, 3).unwrap();
        let text = plan.dump();
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().nth(8).unwrap().ends_with("\t2,1,3"));
    }

    #[test]
    fn u_factor_matches_inverse_at_full_budget() {
        let (order, pts) = figure4();
        let plan = VecchiaPlan::from_order(order.clone(), &pts, 9).unwrap();
        let theta = [0.3];
        let f = SparseUFactor::build(&plan, &pts, &theta, 1e-6).unwrap();
        let u = f.to_dense_u(&plan);
        let k = crate::kernel::cov_matrix(&pts, &theta, true, 1e-6);
        // reorder K into plan order
        let idx: Vec<usize> = order.iter().map(|o| o.stacked_index(5)).collect();
        let kp = DMatrix::from_fn(10, 10, |a, b| k[(idx[a], idx[b])]);
        let prod = &kp * &u * u.transpose();
        assert!((prod - DMatrix::identity(10, 10)).amax() < 1e-6);
        assert!(f.nnz() <= 10 * 10);
    }
}
