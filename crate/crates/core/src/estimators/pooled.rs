use nalgebra::{DMatrix, DVector};

use super::quantile::validate;
use super::simplex::{self, SimplexOptions};
use super::EstimationError;
use crate::panel::{PanelDataset, ResponseKind};

#[derive(Debug, Clone, Default)]
pub struct PooledOptions {
    /// Iteration cap; `None` scales it with the problem size.
    pub max_iter: Option<usize>,
    /// Basis of a previous pooled fit on the same panel.
    pub warm_basis: Option<Vec<usize>>,
}

/// Joint fit of individual intercepts and a common slope vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub alphas: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub iterations: usize,
    pub basis: Vec<usize>,
}

/// Stacked design with `n` indicator columns followed by the covariates.
pub fn pooled_design(panel: &PanelDataset) -> DMatrix<f64> {
    let (n, t, p) = (panel.n(), panel.periods(), panel.p());
    let mut x = DMatrix::zeros(n * t, n + p);
    for i in 0..n {
        for s in 0..t {
            let row = i * t + s;
            x[(row, i)] = 1.0;
            for j in 0..p {
                x[(row, n + j)] = panel.covariates()[(row, j)];
            }
        }
    }
    x
}

fn lower_quantile(values: &mut [f64], tau: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((tau * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

/// Start: least-squares slopes, then per-individual residual quantiles.
fn initial_point(panel: &PanelDataset, tau: f64) -> DVector<f64> {
    let (n, t, p) = (panel.n(), panel.periods(), panel.p());
    let mut start = DVector::zeros(n + p);
    let mut beta = DVector::zeros(p);
    if p > 0 {
        // within transformation removes the intercepts
        let mut xc = panel.covariates().clone();
        let mut yc = panel.response().clone();
        for i in 0..n {
            let rows = i * t..(i + 1) * t;
            let ymean = yc.rows(i * t, t).mean();
            for r in rows.clone() {
                yc[r] -= ymean;
            }
            for j in 0..p {
                let m = xc.view((i * t, j), (t, 1)).mean();
                for r in rows.clone() {
                    xc[(r, j)] -= m;
                }
            }
        }
        if let Some(ch) = xc.tr_mul(&xc).cholesky() {
            beta = ch.solve(&xc.tr_mul(&yc));
        }
    }
    for i in 0..n {
        let mut resid: Vec<f64> = (0..t)
            .map(|s| {
                let row = i * t + s;
                panel.response()[row] - (panel.covariates().row(row) * &beta)[0]
            })
            .collect();
        start[i] = lower_quantile(&mut resid, tau);
    }
    for j in 0..p {
        start[n + j] = beta[j];
    }
    start
}

/// Pooled quantile regression
/// `argmin (nT)⁻¹ Σ_i Σ_t ρ_τ(Y_it − α_i − x_itᵀβ)` over `(α_1..α_n, β)`.
///
/// Ties are broken towards the smallest sum of intercepts, so with no
/// covariates each `α_i` is the lower-vertex sample quantile of individual `i`.
pub fn fit_pooled_quantile(
    panel: &PanelDataset,
    tau: f64,
    opts: &PooledOptions,
) -> Result<PooledFit, EstimationError> {
    if panel.kind() != ResponseKind::Continuous {
        return Err(EstimationError::InvalidInput(
            "pooled quantile regression needs a continuous response".into(),
        ));
    }
    let (n, p) = (panel.n(), panel.p());
    let x = pooled_design(panel);
    let y = panel.response();
    validate(&x, y, tau)?;

    let mut tiebreak = DVector::zeros(n + p);
    for i in 0..n {
        tiebreak[i] = 1.0;
    }
    let sopts = SimplexOptions {
        max_iter: opts.max_iter.unwrap_or(200 * (n + p) + 10_000),
        tiebreak: Some(tiebreak),
    };

    let warm = opts
        .warm_basis
        .as_ref()
        .filter(|b| b.len() == n + p)
        .and_then(|b| simplex::solve_from_basis(&x, y, tau, b.clone(), &sopts).ok());
    let sol = match warm {
        Some(sol) => sol,
        None => simplex::solve(&x, y, tau, &initial_point(panel, tau), &sopts)?,
    };
    Ok(PooledFit {
        alphas: sol.coef.rows(0, n).iter().copied().collect(),
        beta: sol.coef.rows(n, p).iter().copied().collect(),
        tau,
        iterations: sol.iterations,
        basis: sol.basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_covariates_gives_individual_medians() {
        let x = DMatrix::zeros(6, 0);
        let y = DVector::from_vec(vec![3.0, 1.0, 2.0, 10.0, 30.0, 20.0]);
        let panel = PanelDataset::with_numbered_ids(2, 3, x, y, ResponseKind::Continuous).unwrap();
        let fit = fit_pooled_quantile(&panel, 0.5, &PooledOptions::default()).unwrap();
        assert_eq!(fit.alphas, vec![2.0, 20.0]);
        assert!(fit.beta.is_empty());
    }

    #[test]
    fn binary_panel_rejected() {
        let x = DMatrix::zeros(4, 0);
        let y = DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]);
        let panel = PanelDataset::with_numbered_ids(2, 2, x, y, ResponseKind::Binary).unwrap();
        assert!(fit_pooled_quantile(&panel, 0.5, &PooledOptions::default()).is_err());
    }
}
