use nalgebra::{DMatrix, DVector};

use super::bandwidth::hall_sheather_bandwidth;
use super::simplex::{self, SimplexOptions, SimplexSolution};
use super::{CoefficientEstimate, EstimationError, QuantileFitBundle};

#[derive(Debug, Clone, Copy)]
pub struct QuantileOptions {
    pub max_iter: usize,
    /// Return the vertex with the smallest first coefficient when the
    /// minimizer is not unique.
    pub lower_vertex: bool,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        QuantileOptions {
            max_iter: 50_000,
            lower_vertex: true,
        }
    }
}

pub(crate) fn validate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
) -> Result<(), EstimationError> {
    let (t, s) = x.shape();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(EstimationError::InvalidInput(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    if y.len() != t {
        return Err(EstimationError::InvalidInput(format!(
            "response length {} does not match design rows {t}",
            y.len()
        )));
    }
    if s == 0 || t < s + 1 {
        return Err(EstimationError::InvalidInput(format!(
            "need at least {} observations for {s} coefficients, got {t}",
            s + 1
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EstimationError::InvalidInput("non-finite data".into()));
    }
    Ok(())
}

fn least_squares_start(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DVector<f64>, EstimationError> {
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(y);
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(EstimationError::SingularDesign)
}

fn first_coordinate(s: usize) -> DVector<f64> {
    let mut c = DVector::zeros(s);
    c[0] = 1.0;
    c
}

pub(crate) fn solve_quantile(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    warm_basis: Option<&[usize]>,
    opts: &QuantileOptions,
) -> Result<SimplexSolution, EstimationError> {
    let sopts = SimplexOptions {
        max_iter: opts.max_iter,
        tiebreak: opts.lower_vertex.then(|| first_coordinate(x.ncols())),
    };
    if let Some(rows) = warm_basis {
        if rows.len() == x.ncols() {
            if let Ok(sol) = simplex::solve_from_basis(x, y, tau, rows.to_vec(), &sopts) {
                return Ok(sol);
            }
        }
    }
    let start = least_squares_start(x, y)?;
    simplex::solve(x, y, tau, &start, &sopts)
}

/// Linear quantile regression `argmin Σ ρ_τ(y_t − x_tᵀγ)`.
///
/// Returns a basic (vertex) solution; with `lower_vertex` set, ties are broken
/// towards the smallest first coefficient.
pub fn fit_quantile(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    opts: &QuantileOptions,
) -> Result<CoefficientEstimate, EstimationError> {
    fit_quantile_warm(x, y, tau, None, opts).map(|(est, _)| est)
}

/// As [`fit_quantile`], optionally warm-started from the basis of a nearby
/// fit. Also returns the final basis.
pub fn fit_quantile_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    warm_basis: Option<&[usize]>,
    opts: &QuantileOptions,
) -> Result<(CoefficientEstimate, Vec<usize>), EstimationError> {
    validate(x, y, tau)?;
    let sol = solve_quantile(x, y, tau, warm_basis, opts)?;
    let est = CoefficientEstimate {
        individual: 0,
        gamma: sol.coef.iter().copied().collect(),
        tau: Some(tau),
        converged: true,
        iterations: sol.iterations,
    };
    Ok((est, sol.basis))
}

/// Fits at `τ` and `τ ± d_T` with the Hall–Sheather bandwidth for `T = x.nrows()`.
pub fn fit_quantile_bundle(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    opts: &QuantileOptions,
) -> Result<QuantileFitBundle, EstimationError> {
    let bandwidth = hall_sheather_bandwidth(x.nrows(), tau, 0.05);
    if bandwidth <= 0.0 {
        return Err(EstimationError::InvalidInput(format!(
            "no admissible bandwidth at tau = {tau}"
        )));
    }
    let (center, basis) = fit_quantile_warm(x, y, tau, None, opts)?;
    let (upper, _) = fit_quantile_warm(x, y, tau + bandwidth, Some(&basis), opts)?;
    let (lower, _) = fit_quantile_warm(x, y, tau - bandwidth, Some(&basis), opts)?;
    Ok(QuantileFitBundle {
        center,
        upper,
        lower,
        bandwidth,
    })
}
