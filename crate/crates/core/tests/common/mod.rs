//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spectral_panel::estimators::{log_likelihood, plug_in_hessian, quantile_objective};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Design with a leading column of ones and `s - 1` Gaussian covariates.
pub fn random_design(r: &mut ChaCha8Rng, t: usize, s: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, s, |_, j| if j == 0 { 1.0 } else { normal(r) })
}

/// Linear model with heteroskedastic Gaussian noise.
pub fn random_instance(r: &mut ChaCha8Rng, t: usize, s: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = random_design(r, t, s);
    let beta = DVector::from_fn(s, |_, _| normal(r));
    let noise = DVector::from_fn(t, |_, _| normal(r) * (1.0 + r.gen::<f64>()));
    let y = &x * beta + noise;
    (x, y)
}

/// Binary outcomes drawn from a logistic model at `truth`.
pub fn logistic_outcomes(
    r: &mut ChaCha8Rng,
    x: &DMatrix<f64>,
    truth: &DVector<f64>,
) -> DVector<f64> {
    let eta = x * truth;
    DVector::from_fn(x.nrows(), |i, _| {
        if r.gen::<f64>() < 1.0 / (1.0 + (-eta[i]).exp()) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn subsets(t: usize, s: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, t: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == s {
            out.push(cur.clone());
            return;
        }
        for i in start..t {
            cur.push(i);
            go(i + 1, t, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, t, s, &mut Vec::new(), &mut out);
    out
}

/// Minimum check-loss objective over all exact-fit basic solutions.
pub fn brute_force_minimum(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
    let s = x.ncols();
    let mut best = f64::INFINITY;
    for rows in subsets(x.nrows(), s) {
        let xs = DMatrix::from_fn(s, s, |a, b| x[(rows[a], b)]);
        let ys = DVector::from_fn(s, |a, _| y[rows[a]]);
        if xs.determinant().abs() < 1e-12 {
            continue;
        }
        if let Some(coef) = xs.lu().solve(&ys) {
            best = best.min(quantile_objective(x, y, &coef, tau));
        }
    }
    best
}

/// Largest violation of the subgradient optimality condition
/// `|Σ_t x_tj ψ_τ(r_t)| ≤ Σ_{r_t = 0} |x_tj|` over columns `j`.
pub fn certificate_violation(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
    tau: f64,
) -> f64 {
    let r = y - x * coef;
    let scale = y.amax().max(1.0);
    let zero = |v: f64| v.abs() <= 1e-9 * scale;
    let mut worst = f64::NEG_INFINITY;
    for j in 0..x.ncols() {
        let mut score = 0.0;
        let mut slack = 0.0;
        for t in 0..x.nrows() {
            let psi = if r[t] < 0.0 && !zero(r[t]) {
                tau - 1.0
            } else {
                tau
            };
            score += x[(t, j)] * psi;
            if zero(r[t]) {
                slack += x[(t, j)].abs();
            }
        }
        worst = worst.max(score.abs() - slack);
    }
    worst
}

/// Largest relative gap between the plug-in Hessian and central second
/// differences (step `h`) of the mean log-likelihood at `gamma`.
pub fn hessian_fd_error(x: &DMatrix<f64>, y: &DVector<f64>, gamma: &DVector<f64>, h: f64) -> f64 {
    let s = gamma.len();
    let analytic = plug_in_hessian(x, gamma);
    let f = |d: &DVector<f64>| log_likelihood(x, y, &(gamma + d));
    let e = |i: usize, sign: f64| DVector::from_fn(s, |k, _| if k == i { sign * h } else { 0.0 });
    let mut worst: f64 = 0.0;
    for a in 0..s {
        for b in 0..s {
            let numeric = (f(&(e(a, 1.0) + e(b, 1.0)))
                - f(&(e(a, 1.0) + e(b, -1.0)))
                - f(&(e(a, -1.0) + e(b, 1.0)))
                + f(&(e(a, -1.0) + e(b, -1.0))))
                / (4.0 * h * h);
            worst = worst.max((numeric + analytic[(a, b)]).abs() / analytic.amax());
        }
    }
    worst
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Best agreement over all bijections of `1..=g`, by enumeration.
pub fn exhaustive_match(truth: &[usize], est: &[usize], g: usize) -> f64 {
    permutations(g)
        .iter()
        .map(|p| {
            truth
                .iter()
                .zip(est)
                .filter(|(&t, &e)| p[t - 1] + 1 == e)
                .count()
        })
        .max()
        .unwrap() as f64
        / truth.len() as f64
}
