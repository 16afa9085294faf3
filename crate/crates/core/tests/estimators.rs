mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use spectral_panel::estimators::{
    check_loss, fit_logistic, fit_pooled_quantile, fit_quantile, fit_quantile_bundle,
    hk_covariance, hk_covariance_with, intercept_variance, pooled_design, quantile_objective,
    DensityRule, LogisticOptions, PooledOptions, QuantileOptions,
};
use spectral_panel::panel::{PanelDataset, ResponseKind};
use spectral_panel::simulation::dgp::{gen_model3, ErrorDist};

#[test]
fn quantile_fit_matches_basic_solution_enumeration() {
    let mut r = rng(1);
    for case in 0..60 {
        let t = 4 + case % 9;
        let s = 1 + case % 3;
        let tau = [0.25, 0.5, 0.7, 0.9][case % 4];
        let (x, y) = random_instance(&mut r, t, s);
        let fit = fit_quantile(&x, &y, tau, &QuantileOptions::default()).unwrap();
        let got = quantile_objective(&x, &y, &fit.gamma_vector(), tau);
        let want = brute_force_minimum(&x, &y, tau);
        assert!(
            (got - want).abs() <= 1e-9 * want.max(1.0),
            "case {case}: T={t} s={s} tau={tau}: {got} vs {want}"
        );
    }
}

fn assert_certificate(x: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, tau: f64) {
    let v = certificate_violation(x, y, coef, tau);
    assert!(v <= 1e-8, "subgradient violation {v}");
}

#[test]
fn quantile_fits_satisfy_subgradient_certificate() {
    let mut r = rng(2);
    for case in 0..100 {
        let t = 15 + (case * 7) % 120;
        let s = 1 + case % 4;
        let tau = 0.05 + 0.9 * r.gen::<f64>();
        let (x, y) = random_instance(&mut r, t, s);
        let fit = fit_quantile(&x, &y, tau, &QuantileOptions::default()).unwrap();
        let coef = fit.gamma_vector();
        assert_certificate(&x, &y, &coef, tau);

        let res = &y - &x * &coef;
        let neg = res.iter().filter(|&&v| v < -1e-9).count() as f64;
        let nonpos = res.iter().filter(|&&v| v <= 1e-9).count() as f64;
        assert!(neg <= tau * t as f64 + 1e-9 && tau * t as f64 <= nonpos + s as f64);

        let base = quantile_objective(&x, &y, &coef, tau);
        for j in 0..s {
            for delta in [-1e-3, 1e-3] {
                let mut probe = coef.clone();
                probe[j] += delta;
                assert!(base <= quantile_objective(&x, &y, &probe, tau) + 1e-12);
            }
        }
    }
}

#[test]
fn logistic_hessian_matches_finite_differences() {
    let mut r = rng(3);
    for case in 0..20 {
        let t = 200 + 20 * case;
        let s = 2 + case % 3;
        let x = random_design(&mut r, t, s);
        let truth = DVector::from_fn(s, |_, _| 0.8 * normal(&mut r));
        let y = logistic_outcomes(&mut r, &x, &truth);
        let opts = LogisticOptions::default();
        let fit = fit_logistic(&x, &y, opts).unwrap();
        let g = fit.gamma_vector();

        let resid = DVector::from_fn(t, |i, _| y[i] - 1.0 / (1.0 + (-(x.row(i) * &g)[0]).exp()));
        let grad = x.tr_mul(&resid) / t as f64;
        assert!(grad.amax() <= opts.tol, "gradient {}", grad.amax());

        let err = hessian_fd_error(&x, &y, &g, 1e-5);
        assert!(err <= 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn logistic_recovers_simulated_coefficients() {
    let truth = DVector::from_vec(vec![0.5, 1.0]);
    let mut close = 0;
    for seed in 0..50 {
        let mut r = rng(100 + seed);
        let x = random_design(&mut r, 500, 2);
        let y = logistic_outcomes(&mut r, &x, &truth);
        let fit = fit_logistic(&x, &y, LogisticOptions::default()).unwrap();
        if (fit.gamma_vector() - &truth).norm() < 0.3 {
            close += 1;
        }
    }
    assert!(close >= 47, "{close}/50 within 0.3");
}

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

fn location_sample(seed: u64, t: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut r = rng(seed);
    let x = DMatrix::from_element(t, 1, 1.0);
    let y = DVector::from_fn(t, |_, _| 2.0 + normal(&mut r));
    (x, y)
}

#[test]
fn sandwich_variance_of_the_median_is_half_pi() {
    for rule in [DensityRule::Floor, DensityRule::Truncate] {
        let mut within = 0;
        let mut total = 0.0;
        for seed in 0..50 {
            let (x, y) = location_sample(200 + seed, 2000);
            let bundle = fit_quantile_bundle(&x, &y, 0.5, &QuantileOptions::default()).unwrap();
            let v = hk_covariance_with(&bundle, &x, rule).unwrap().sigma[(0, 0)];
            total += v;
            if (v / HALF_PI - 1.0).abs() < 0.25 {
                within += 1;
            }
        }
        assert!(within >= 45, "{rule:?}: {within}/50 within 25%");
        assert!((total / 50.0 / HALF_PI - 1.0).abs() < 0.1);
    }
}

#[test]
fn intercept_variance_of_the_median_is_half_pi() {
    let mut within = 0;
    for seed in 0..50 {
        let (x, y) = location_sample(300 + seed, 2000);
        let b = fit_quantile_bundle(&x, &y, 0.5, &QuantileOptions::default()).unwrap();
        let v = intercept_variance(0, b.upper.gamma[0], b.lower.gamma[0], 0.5, b.bandwidth)
            .unwrap()
            .sigma[(0, 0)];
        if (v / HALF_PI - 1.0).abs() < 0.25 {
            within += 1;
        }
    }
    assert!(within >= 45, "{within}/50 within 25%");
}

#[test]
fn sandwich_is_reconstructed_from_its_parts() {
    let mut r = rng(4);
    for _ in 0..10 {
        let (x, y) = random_instance(&mut r, 150, 3);
        let tau = 0.4;
        let bundle = fit_quantile_bundle(&x, &y, tau, &QuantileOptions::default()).unwrap();
        let got = hk_covariance(&bundle, &x).unwrap().sigma;

        let t = x.nrows() as f64;
        let spread = bundle.upper.gamma_vector() - bundle.lower.gamma_vector();
        let mut b = DMatrix::zeros(3, 3);
        let mut h = DMatrix::zeros(3, 3);
        for i in 0..x.nrows() {
            let z = x.row(i).transpose();
            let den = (z.transpose() * &spread)[0].max(1e-6);
            let zz = &z * z.transpose();
            b += &zz * (2.0 * bundle.bandwidth / den);
            h += zz * (tau * (1.0 - tau));
        }
        b /= t;
        h /= t;
        let binv = b.try_inverse().unwrap();
        let want = &binv * h * &binv;
        assert!((&got - &want).amax() <= 1e-12 * want.amax().max(1.0));
        assert!((&got - got.transpose()).amax() <= 1e-12 * got.amax());
        assert!(got.clone().symmetric_eigenvalues().min() >= -1e-10 * got.norm());
    }
}

#[test]
fn pooled_fit_beats_grid_search() {
    let mut r = rng(5);
    for _ in 0..5 {
        let x = DMatrix::from_fn(8, 1, |_, _| normal(&mut r));
        let alpha = [1.0, -0.5];
        let y = DVector::from_fn(8, |i, _| {
            alpha[i / 4] + 0.7 * x[(i, 0)] + 0.5 * normal(&mut r)
        });
        let panel =
            PanelDataset::with_numbered_ids(2, 4, x.clone(), y.clone(), ResponseKind::Continuous)
                .unwrap();
        let tau = 0.5;
        let fit = fit_pooled_quantile(&panel, tau, &PooledOptions::default()).unwrap();
        let loss = |a1: f64, a2: f64, b: f64| -> f64 {
            (0..8)
                .map(|i| check_loss(tau, y[i] - [a1, a2][i / 4] - b * x[(i, 0)]))
                .sum::<f64>()
                / 8.0
        };
        let got = loss(fit.alphas[0], fit.alphas[1], fit.beta[0]);
        let step = 0.05;
        let mut grid_min = f64::INFINITY;
        for i in 0..61 {
            for j in 0..61 {
                for k in 0..61 {
                    let off = |m: usize| (m as f64 - 30.0) * step;
                    grid_min =
                        grid_min.min(loss(alpha[0] + off(i), alpha[1] + off(j), 0.7 + off(k)));
                }
            }
        }
        assert!(got <= grid_min + 1e-12, "{got} > {grid_min}");
        // The grid point nearest the optimum is at most half a step away in each coordinate.
        let lipschitz = 0.5 * (2.0 + x.iter().map(|v| v.abs()).sum::<f64>() / 8.0);
        assert!(grid_min - got <= lipschitz * step, "{grid_min} vs {got}");
    }
}

#[test]
fn pooled_fit_satisfies_certificate_on_stacked_design() {
    let sim = gen_model3(12, 25, ErrorDist::Normal, 8);
    let fit = fit_pooled_quantile(&sim.panel, 0.3, &PooledOptions::default()).unwrap();
    let x = pooled_design(&sim.panel);
    let coef = DVector::from_iterator(
        fit.alphas.len() + 1,
        fit.alphas.iter().chain(&fit.beta).copied(),
    );
    assert_certificate(&x, sim.panel.response(), &coef, 0.3);
}

#[test]
fn pooled_without_covariates_separates() {
    let mut r = rng(6);
    let (n, t) = (5, 9);
    let y = DVector::from_fn(n * t, |_, _| normal(&mut r));
    let panel = PanelDataset::with_numbered_ids(
        n,
        t,
        DMatrix::zeros(n * t, 0),
        y,
        ResponseKind::Continuous,
    )
    .unwrap();
    for tau in [0.2, 0.5, 0.75] {
        let fit = fit_pooled_quantile(&panel, tau, &PooledOptions::default()).unwrap();
        for i in 0..n {
            let single = fit_quantile(
                &DMatrix::from_element(t, 1, 1.0),
                &panel.individual_response(i),
                tau,
                &QuantileOptions::default(),
            )
            .unwrap();
            assert_eq!(fit.alphas[i], single.gamma[0]);
        }
    }
}

#[test]
fn pooled_intercepts_track_model3_classes() {
    let mut good = 0;
    let seeds = 40;
    for seed in 0..seeds {
        let sim = gen_model3(30, 60, ErrorDist::Normal, 1000 + seed);
        let fit = fit_pooled_quantile(&sim.panel, 0.5, &PooledOptions::default()).unwrap();
        let worst = fit
            .alphas
            .iter()
            .zip(&sim.truth)
            .map(|(a, &g)| (a - g as f64).abs())
            .fold(0.0, f64::max);
        if worst < 0.5 {
            good += 1;
        }
    }
    assert!(good as f64 >= 0.95 * seeds as f64, "{good}/{seeds}");
}
