mod support;

use gradgp::bench::{crps_gaussian, lhs};
use gradgp::chainfile::InputScale;
use gradgp::gauss::chol_jitter;
use gradgp::kernel::{assemble_grad_cov, k_entry, DerivIndex, Lengthscales, Points};
use gradgp::mh::mh_lengthscale;
use gradgp::vecchia::{cond_sets, order_grad};
use gradgp::{aggregate_moments, solve_chain, ChainDirection, ProposalWindow, ThetaPrior};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, dim)
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|d| (point(d), point(d), prop::collection::vec(0.05..2.0f64, d)))
}

fn entry(d: usize, f: usize, a: &[f64], b: &[f64], ls: &Lengthscales) -> f64 {
    let dim = ls.dim();
    k_entry(DerivIndex::new(d, dim).unwrap(), DerivIndex::new(f, dim).unwrap(), a, b, ls).unwrap()
}

proptest! {
    #[test]
    fn kernel_blocks_are_symmetric((a, b, theta) in case()) {
        let ls = Lengthscales::new(theta).unwrap();
        let dim = ls.dim();
        for d in 0..=dim {
            for f in 0..=dim {
                let ab = entry(d, f, &a, &b, &ls);
                let ba = entry(f, d, &b, &a, &ls);
                prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
            }
        }
    }

    #[test]
    fn kernel_sign_structure((a, b, theta) in case()) {
        let ls = Lengthscales::new(theta.clone()).unwrap();
        let k = entry(0, 0, &a, &b, &ls);
        prop_assert!(k > 0.0 && k <= 1.0);
        for d in 1..=ls.dim() {
            let diff = a[d - 1] - b[d - 1];
            prop_assert!(entry(d, 0, &a, &b, &ls) * diff <= 0.0);
            prop_assert!(entry(0, d, &a, &b, &ls) * diff >= 0.0);
            prop_assert!((entry(d, d, &a, &a, &ls) - 2.0 / theta[d - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_covariance_is_positive_definite(
        seed in 0u64..1000,
        n in 1usize..8,
        dim in 1usize..4,
        theta in 0.1..1.0f64,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = lhs(n, dim, &mut rng);
        let k = assemble_grad_cov(&x, &Lengthscales::isotropic(theta, dim).unwrap(), 1e-8).unwrap();
        prop_assert_eq!(k.nrows(), n * (1 + dim));
        prop_assert!((&k - k.transpose()).amax() < 1e-12);
        let eig = k.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > -1e-8 * eig.max());
        prop_assert!(chol_jitter(&k, 0.0).is_ok());
    }

    #[test]
    fn conditioning_sets_look_backwards(seed in 0u64..1000, n in 1usize..12, blocks in 0usize..3, m in 1usize..8) {
        let dim = blocks.max(1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let locs = Points::from_matrix(&lhs(n, dim, &mut rng));
        let order = order_grad(n, blocks, &mut rng);
        prop_assert_eq!(order.len(), n * (1 + blocks));
        let sets = cond_sets(&order, &locs, m).unwrap();
        for (p, set) in sets.iter().enumerate() {
            prop_assert!(set.len() == p.min(m));
            prop_assert!(set.iter().all(|&q| q < p));
            let here = locs.row(order[p].loc);
            let dist = |q: usize| locs.sq_dist(order[q].loc, here);
            // Responses are never passed over for an equally near derivative.
            for q in 0..p {
                if set.contains(&q) || order[q].deriv != 0 {
                    continue;
                }
                let beaten = set.iter().any(|&r| order[r].deriv > 0 && dist(r) == dist(q));
                prop_assert!(!beaten);
            }
        }
    }

    #[test]
    fn metropolis_keeps_lengthscales_positive(seed in 0u64..1000, theta in 1e-3..10.0f64, ll in -50.0..50.0f64) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let prior = ThetaPrior::default();
        let window = ProposalWindow::default();
        let mut t = theta;
        let mut cur = ll;
        for _ in 0..20 {
            let s = mh_lengthscale(t, cur, |v| Some(-v), &prior, &window, &mut rng);
            prop_assert!(s.theta > 0.0);
            let (lo, hi) = window.bounds(t);
            prop_assert!(s.theta == t || (s.theta >= lo && s.theta <= hi));
            t = s.theta;
            cur = s.loglik;
        }
    }

    #[test]
    fn pooled_variance_dominates_mean_variance(
        parts in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 3), prop::collection::vec(0.0..2.0f64, 3)), 1..6)
    ) {
        let per_t: Vec<_> = parts
            .iter()
            .map(|(m, v)| (DVector::from_vec(m.clone()), DVector::from_vec(v.clone())))
            .collect();
        let (mean, var) = aggregate_moments(&per_t).unwrap();
        let (om, ov) = support::pool(&per_t);
        for i in 0..3 {
            let avg_var = per_t.iter().map(|(_, v)| v[i]).sum::<f64>() / per_t.len() as f64;
            prop_assert!(var[i] >= avg_var - 1e-12);
            prop_assert!((mean[i] - om[i]).abs() < 1e-12);
            prop_assert!((var[i] - ov[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn chain_rule_round_trip(dim in 1usize..=6, seed in 0u64..10_000) {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let jac = DMatrix::from_fn(dim, dim, |i, j| rng.random_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 });
        let g = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let w = solve_chain(&jac, &g, ChainDirection::ToW).unwrap();
        let back = solve_chain(&jac, &w, ChainDirection::ToX).unwrap();
        prop_assert!((back - g).amax() < 1e-10);
    }

    #[test]
    fn crps_is_nonnegative(mu in -10.0..10.0f64, sigma in 0.0..5.0f64, y in -10.0..10.0f64) {
        let c = crps_gaussian(mu, sigma, y);
        prop_assert!(c >= 0.0);
        prop_assert!(c <= (y - mu).abs() + sigma);
    }

    #[test]
    fn latin_hypercube_stratifies(seed in 0u64..1000, n in 1usize..30, dim in 1usize..5) {
        let x = lhs(n, dim, &mut ChaCha20Rng::seed_from_u64(seed));
        for d in 0..dim {
            let mut bins: Vec<usize> = x.column(d).iter().map(|v| (v * n as f64).floor() as usize).collect();
            bins.sort();
            prop_assert_eq!(bins, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn input_scale_maps_into_unit_cube(rows in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 3), 1..20)) {
        let x = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
        let s = InputScale::fit(&x);
        let u = s.to_unit(&x).unwrap();
        prop_assert!(u.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }
}
