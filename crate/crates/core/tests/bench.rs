mod support;

use std::f64::consts::{PI, SQRT_2};

use gradgp::bench::{crps_gaussian, mean_crps, rmse, score, TestFunction, SQUIGGLE_SIGMA};
use gradgp::{Error, PosteriorMoments};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use support::central;

fn phi(z: f64) -> f64 {
    Normal::standard().pdf(z)
}

fn cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for (name, dim) in [("step", 1), ("squiggle", 2), ("plateau", 3), ("ignition", 6)] {
        let f = TestFunction::lookup(name, dim, None).unwrap();
        let mut checked = 0;
        while checked < 25 {
            let u: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.95)).collect();
            let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if name == "ignition" && (r - 2.0).abs() < 0.2 {
                continue;
            }
            checked += 1;
            let (_, g) = f.eval(&u).unwrap();
            for d in 0..dim {
                let fd = central(|p| f.eval(p).unwrap().0, &u, d, 1e-6);
                assert!((fd - g[d]).abs() <= 1e-5 * fd.abs().max(1.0), "{name} d={d}: {} vs {fd}", g[d]);
            }
        }
    }
}

#[test]
fn squiggle_matches_closed_form() {
    let f = TestFunction::lookup("squiggle", 2, None).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        let mu = 0.25 * (2.0 * PI * x1 * x1).sin() - 0.1 * x1 + 0.5;
        let s = SQUIGGLE_SIGMA;
        let expected = x1 * x2 * phi((x2 - mu) / s) / s;
        assert!((f.eval(&[x1, x2]).unwrap().0 - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }
    let narrow = TestFunction::lookup("squiggle", 2, Some(0.05)).unwrap();
    assert_ne!(narrow, f);
    assert!(TestFunction::lookup("squiggle", 2, Some(-1.0)).is_err());
}

#[test]
fn step_is_a_smoothed_threshold() {
    let f = TestFunction::lookup("step", 1, None).unwrap();
    for u in [0.1, 0.45, 0.5, 0.62, 0.9] {
        let (y, g) = f.eval(&[u]).unwrap();
        assert!((y - cdf((u - 0.5) / 0.065)).abs() < 1e-14);
        assert!((g[0] - phi((u - 0.5) / 0.065) / 0.065).abs() < 1e-10);
    }
}

#[test]
fn plateau_on_the_unit_cube() {
    let f = TestFunction::lookup("plateau", 3, None).unwrap();
    let u = [0.7, 0.1, 0.4];
    let s: f64 = u.iter().map(|v| 4.0 * v - 2.0).sum();
    let z = SQRT_2 * (-4.0 - 3.0 * s);
    let (y, g) = f.eval(&u).unwrap();
    assert!((y - (2.0 * cdf(z) - 1.0)).abs() < 1e-14);
    for gd in g {
        assert!((gd - (-24.0 * SQRT_2 * phi(z))).abs() < 1e-12 * gd.abs().max(1e-300));
    }
    assert!(TestFunction::lookup("plateau", 0, None).is_err());
}

#[test]
fn ignition_rejects_the_origin() {
    let f = TestFunction::lookup("ignition", 6, None).unwrap();
    assert!(matches!(f.eval(&[0.0; 6]), Err(Error::Domain(_))));
    let (y, _) = f.eval(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let t = cdf(10.0 * SQRT_2 * (1.0 - 2.0));
    assert!((y - (1.0 + 200000.0 * t).log10()).abs() < 1e-12);
}

#[test]
fn crps_closed_form_values() {
    for sigma in [0.5, 1.0, 3.0] {
        assert!((crps_gaussian(2.0, sigma, 2.0) / sigma - 0.233_695_8).abs() < 1e-6);
    }
    // Large |z| approaches the absolute error.
    assert!((crps_gaussian(0.0, 0.01, 5.0) - (5.0 - 0.01 / PI.sqrt())).abs() < 1e-9);
    assert!(mean_crps(&[0.0], &[1.0, 2.0], &[0.0]).is_err());
}

#[test]
fn score_averages_gradient_dimensions() {
    let pred = PosteriorMoments {
        n_p: 2,
        dim: 2,
        with_gradient: true,
        mean: DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0, 1.0, 1.0]),
        var: DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
        cov: None,
        samples: None,
    };
    let y = DVector::from_vec(vec![1.0, 4.0]);
    let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
    let s = score(&pred, &y, Some(&g)).unwrap();
    assert!((s.rmse_y - 2.0f64.sqrt()).abs() < 1e-15);
    assert!((s.crps_y - 1.0).abs() < 1e-15);
    assert_eq!(s.rmse_grad, Some(0.0));
    assert!((s.crps_grad.unwrap() - 0.233_695_8).abs() < 1e-6);
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!(rmse(&[], &[]).is_err());
}
