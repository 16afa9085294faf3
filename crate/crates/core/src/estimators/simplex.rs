//! Basic-solution exchange solver for linear quantile regression.
//!
//! The check-loss problem `min_b Σ ρ_τ(y_t - x_tᵀ b)` is a linear program whose
//! vertices are "basic" solutions interpolating exactly `s` observations. The
//! solver starts from a basis obtained by crossover from an approximate fit and
//! walks along descending edges. Each step drops one basic observation and picks
//! the entering observation with a weighted-median line search along the edge,
//! so every iteration strictly decreases the objective.
//!
//! Optimality at a vertex is checked through the directional derivatives along
//! all `2s` edges; degenerate (extra interpolated) observations are accounted
//! for with their one-sided slopes.

use nalgebra::{DMatrix, DVector};

use super::EstimationError;

/// Refactor the basis inverse from scratch after this many rank-one updates.
const REFACTOR_EVERY: usize = 40;

#[derive(Debug, Clone)]
pub(crate) struct SimplexOptions {
    pub max_iter: usize,
    /// Direction whose inner product with the solution is minimized across the
    /// optimal face once a minimizer has been found.
    pub tiebreak: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexSolution {
    pub coef: DVector<f64>,
    pub basis: Vec<usize>,
    pub iterations: usize,
}

struct Basis<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    tau: f64,
    rows: Vec<usize>,
    in_basis: Vec<bool>,
    /// Inverse of the s×s matrix whose rows are the basic observations.
    inv: DMatrix<f64>,
    coef: DVector<f64>,
    resid: DVector<f64>,
    updates: usize,
    zero_tol: f64,
}

#[inline]
fn psi(tau: f64, r: f64) -> f64 {
    if r < 0.0 {
        tau - 1.0
    } else {
        tau
    }
}

/// Check function `ρ_τ(u) = (τ − 1{u ≤ 0}) u`.
pub fn check_loss(tau: f64, r: f64) -> f64 {
    if r <= 0.0 {
        (tau - 1.0) * r
    } else {
        tau * r
    }
}

/// `Σ_t ρ_τ(y_t − x_tᵀ b)`.
pub fn quantile_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    coef: &DVector<f64>,
    tau: f64,
) -> f64 {
    let fitted = x * coef;
    y.iter()
        .zip(fitted.iter())
        .map(|(yt, ft)| check_loss(tau, yt - ft))
        .sum()
}

/// Greedy choice of `s` linearly independent rows, scanning observations in
/// order of increasing absolute residual under `start`.
fn crossover(x: &DMatrix<f64>, y: &DVector<f64>, start: &DVector<f64>) -> Option<Vec<usize>> {
    let (n, s) = x.shape();
    let resid = y - x * start;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        resid[a]
            .abs()
            .partial_cmp(&resid[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(s);
    let mut rows = Vec::with_capacity(s);
    for &t in &order {
        let row = x.row(t).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row.clone();
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &ortho {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let vn = v.norm();
        if vn > 1e-9 * norm {
            ortho.push(v / vn);
            rows.push(t);
            if rows.len() == s {
                return Some(rows);
            }
        }
    }
    None
}

impl<'a> Basis<'a> {
    fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        tau: f64,
        rows: Vec<usize>,
    ) -> Result<Self, EstimationError> {
        let n = x.nrows();
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut in_basis = vec![false; n];
        for &r in &rows {
            in_basis[r] = true;
        }
        let s = x.ncols();
        let mut basis = Basis {
            x,
            y,
            tau,
            rows,
            in_basis,
            inv: DMatrix::zeros(s, s),
            coef: DVector::zeros(s),
            resid: DVector::zeros(n),
            updates: 0,
            zero_tol: 1e-11 * scale,
        };
        basis.refactor()?;
        Ok(basis)
    }

    fn refactor(&mut self) -> Result<(), EstimationError> {
        let s = self.x.ncols();
        let mut b = DMatrix::zeros(s, s);
        let mut yb = DVector::zeros(s);
        for (k, &t) in self.rows.iter().enumerate() {
            b.set_row(k, &self.x.row(t));
            yb[k] = self.y[t];
        }
        let lu = b.lu();
        self.inv = lu.try_inverse().ok_or(EstimationError::SingularDesign)?;
        self.coef = &self.inv * yb;
        self.resid = self.y - self.x * &self.coef;
        for &t in &self.rows {
            self.resid[t] = 0.0;
        }
        self.updates = 0;
        Ok(())
    }

    fn is_zero(&self, t: usize) -> bool {
        self.resid[t].abs() <= self.zero_tol
    }

    /// Directional derivatives of the objective along `+d_k` and `-d_k` for
    /// every basic index k, where `d_k` is column k of the basis inverse.
    fn edge_slopes(&self) -> Vec<(f64, f64)> {
        let s = self.x.ncols();
        let tau = self.tau;
        let mut weights = DVector::zeros(self.x.nrows());
        let mut degenerate = Vec::new();
        for t in 0..self.x.nrows() {
            if self.in_basis[t] {
                continue;
            }
            if self.is_zero(t) {
                degenerate.push(t);
                continue;
            }
            weights[t] = psi(tau, self.resid[t]);
        }
        let grad = self.x.tr_mul(&weights);
        // v_k = d_kᵀ g
        let v = self.inv.tr_mul(&grad);
        let mut slopes: Vec<(f64, f64)> =
            (0..s).map(|k| (-v[k] + (1.0 - tau), v[k] + tau)).collect();
        for t in degenerate {
            let w = self.x.row(t) * &self.inv;
            for k in 0..s {
                let a = w[k];
                slopes[k].0 += (-tau * a).max((1.0 - tau) * a);
                slopes[k].1 += (tau * a).max(-(1.0 - tau) * a);
            }
        }
        slopes
    }

    /// Moves along `sign * d_k`. With `flat` set the step ends at the first
    /// breakpoint where the slope turns positive (walking an optimal face);
    /// otherwise it stops at the minimizer of the convex line objective.
    /// Returns false when no breakpoint exists (unbounded edge).
    fn step(&mut self, k: usize, sign: f64, initial_slope: f64, flat: bool) -> bool {
        let n = self.x.nrows();
        let dir = self.inv.column(k) * sign;
        let a = self.x * &dir;

        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for t in 0..n {
            if self.in_basis[t] || self.is_zero(t) {
                continue;
            }
            let at = a[t];
            if at == 0.0 {
                continue;
            }
            let delta = self.resid[t] / at;
            if delta > 0.0 {
                breaks.push((delta, t));
            }
        }
        breaks.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));

        let mut slope = initial_slope;
        let mut chosen = None;
        for &(delta, t) in &breaks {
            slope += a[t].abs();
            let stop = if flat { slope > 0.0 } else { slope >= 0.0 };
            if stop {
                chosen = Some((delta, t));
                break;
            }
        }
        let Some((delta, entering)) = chosen else {
            return false;
        };

        self.coef.axpy(delta, &dir, 1.0);
        self.resid.axpy(-delta, &a, 1.0);
        let leaving = self.rows[k];
        self.resid[entering] = 0.0;
        self.in_basis[leaving] = false;
        self.in_basis[entering] = true;
        self.rows[k] = entering;

        // Sherman-Morrison update for replacing basis row k by x_entering.
        let pivot_row = self.x.row(entering) * &self.inv;
        let denom = pivot_row[k];
        let col_k = self.inv.column(k).into_owned();
        let mut delta_row = pivot_row;
        delta_row[k] -= 1.0;
        let update = &col_k * (delta_row / denom);
        self.inv -= update;
        self.updates += 1;
        true
    }
}

/// Finds a basic minimizer of the check loss. `start` is an approximate
/// solution used to pick the initial basis.
pub(crate) fn solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    start: &DVector<f64>,
    opts: &SimplexOptions,
) -> Result<SimplexSolution, EstimationError> {
    let rows = crossover(x, y, start).ok_or(EstimationError::SingularDesign)?;
    solve_from_basis(x, y, tau, rows, opts)
}

pub(crate) fn solve_from_basis(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    rows: Vec<usize>,
    opts: &SimplexOptions,
) -> Result<SimplexSolution, EstimationError> {
    let mut basis = Basis::new(x, y, tau, rows)?;
    let s = x.ncols();
    let slope_tol = 1e-10
        * (0..x.nrows())
            .map(|t| x.row(t).amax())
            .sum::<f64>()
            .max(1.0);

    let mut iterations = 0usize;
    loop {
        if iterations >= opts.max_iter {
            return Err(EstimationError::NonConvergence { iterations });
        }
        if basis.updates >= REFACTOR_EVERY {
            basis.refactor()?;
        }
        let slopes = basis.edge_slopes();
        let mut best: Option<(usize, f64, f64)> = None;
        for (k, &(plus, minus)) in slopes.iter().enumerate() {
            for (sign, slope) in [(1.0, plus), (-1.0, minus)] {
                if slope < -slope_tol && best.is_none_or(|b| slope < b.2) {
                    best = Some((k, sign, slope));
                }
            }
        }
        let Some((k, sign, slope)) = best else { break };
        iterations += 1;
        if !basis.step(k, sign, slope, false) {
            return Err(EstimationError::NonConvergence { iterations });
        }
    }

    // Walk the optimal face towards the smallest tie-break value.
    if let Some(c) = &opts.tiebreak {
        loop {
            if iterations >= opts.max_iter {
                return Err(EstimationError::NonConvergence { iterations });
            }
            if basis.updates >= REFACTOR_EVERY {
                basis.refactor()?;
            }
            let slopes = basis.edge_slopes();
            let cinv = basis.inv.tr_mul(c);
            let mut pick = None;
            for k in 0..s {
                let (plus, minus) = slopes[k];
                if plus.abs() <= slope_tol && cinv[k] < -1e-12 {
                    pick = Some((k, 1.0));
                    break;
                }
                if minus.abs() <= slope_tol && cinv[k] > 1e-12 {
                    pick = Some((k, -1.0));
                    break;
                }
            }
            let Some((k, sign)) = pick else { break };
            iterations += 1;
            if !basis.step(k, sign, 0.0, true) {
                break;
            }
        }
    }

    basis.refactor()?;
    Ok(SimplexSolution {
        coef: basis.coef.clone(),
        basis: basis.rows.clone(),
        iterations,
    })
}
