use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    symmetric_condition, CovarianceFlag, CovarianceScale, EstimationError, QuantileFitBundle,
    UncertaintyEstimate,
};

/// Floor applied to `z_tᵀ(γ(τ+d) − γ(τ−d))` before it is used as a divisor.
pub const DENSITY_FLOOR: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;

/// Sandwich `B⁻¹ H B⁻¹` with `H = τ(1−τ) T⁻¹ Σ z zᵀ` and
/// `B = T⁻¹ Σ f_t z zᵀ` for given density estimates `f_t`.
pub fn sandwich_from_densities(
    x: &DMatrix<f64>,
    densities: &DVector<f64>,
    tau: f64,
) -> Result<DMatrix<f64>, EstimationError> {
    let t = x.nrows() as f64;
    let gram = x.tr_mul(x) / t;
    let h = gram * (tau * (1.0 - tau));
    let mut weighted = x.clone();
    for (row, &f) in densities.iter().enumerate() {
        weighted.row_mut(row).scale_mut(f);
    }
    let mut b = x.tr_mul(&weighted) / t;
    b = (&b + b.transpose()) * 0.5;
    let condition = symmetric_condition(&b);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(EstimationError::SingularB { condition });
    }
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or(EstimationError::SingularB { condition })?;
    let s = &b_inv * h * &b_inv;
    Ok((&s + s.transpose()) * 0.5)
}

/// Treatment of non-positive or tiny density denominators
/// `z_tᵀ(γ(τ+d) − γ(τ−d))`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityRule {
    /// Denominators below [`DENSITY_FLOOR`] are raised to it.
    Floor,
    /// `f_t = max(0, 2d / (den − ε))` with `ε = machine-epsilon^{2/3}`, so
    /// observations with a non-positive denominator get zero density.
    #[default]
    Truncate,
}

fn densities(denom: &DVector<f64>, d: f64, rule: DensityRule) -> (DVector<f64>, usize) {
    let eps = f64::EPSILON.powf(2.0 / 3.0);
    let mut flagged = 0usize;
    let f = denom.map(|v| match rule {
        DensityRule::Floor => {
            if v < DENSITY_FLOOR {
                flagged += 1;
                2.0 * d / DENSITY_FLOOR
            } else {
                2.0 * d / v
            }
        }
        DensityRule::Truncate => {
            if v < DENSITY_FLOOR {
                flagged += 1;
            }
            if v <= eps {
                0.0
            } else {
                2.0 * d / (v - eps)
            }
        }
    });
    (f, flagged)
}

/// Hendricks–Koenker sandwich covariance from fits at `τ` and `τ ± d`.
///
/// Densities are difference quotients `2d / z_tᵀ(γ(τ+d) − γ(τ−d))`; a
/// denominator below [`DENSITY_FLOOR`] (quantile crossing) is floored and the
/// result carries a [`CovarianceFlag::QuantileCrossing`].
pub fn hk_covariance(
    bundle: &QuantileFitBundle,
    x: &DMatrix<f64>,
) -> Result<UncertaintyEstimate, EstimationError> {
    hk_covariance_with(bundle, x, DensityRule::Floor)
}

/// [`hk_covariance`] with an explicit rule for small denominators.
pub fn hk_covariance_with(
    bundle: &QuantileFitBundle,
    x: &DMatrix<f64>,
    rule: DensityRule,
) -> Result<UncertaintyEstimate, EstimationError> {
    let fits = [&bundle.center, &bundle.upper, &bundle.lower];
    if fits.iter().any(|f| !f.converged) {
        return Err(EstimationError::InvalidInput(
            "quantile fit did not converge".into(),
        ));
    }
    let tau = bundle.tau();
    let spread = bundle.upper.gamma_vector() - bundle.lower.gamma_vector();
    let (f, flagged) = densities(&(x * spread), bundle.bandwidth, rule);
    let sigma = sandwich_from_densities(x, &f, tau)?;
    let mut out = UncertaintyEstimate::new(
        bundle.center.individual,
        sigma,
        CovarianceScale::PerObservation,
    );
    if flagged > 0 {
        out.flags
            .push(CovarianceFlag::QuantileCrossing { floored: flagged });
    }
    Ok(out)
}

/// Sample-quantile variance `τ(1−τ) ((α(τ+d) − α(τ−d)) / 2d)²` as a 1×1
/// per-observation covariance. A zero spread is flagged.
pub fn intercept_variance(
    individual: usize,
    alpha_plus: f64,
    alpha_minus: f64,
    tau: f64,
    bandwidth: f64,
) -> Result<UncertaintyEstimate, EstimationError> {
    if !(bandwidth > 0.0) {
        return Err(EstimationError::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let slope = (alpha_plus - alpha_minus) / (2.0 * bandwidth);
    let var = tau * (1.0 - tau) * slope * slope;
    let mut out = UncertaintyEstimate::new(
        individual,
        DMatrix::from_element(1, 1, var),
        CovarianceScale::PerObservation,
    );
    if alpha_plus == alpha_minus {
        out.flags.push(CovarianceFlag::ZeroSpread);
    }
    Ok(out)
}
