//! Per-individual and pooled estimators together with the uncertainty
//! matrices consumed by the dissimilarity builder.

mod bandwidth;
mod covariance;
mod logistic;
mod panel_fit;
mod pooled;
mod quantile;
pub(crate) mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bandwidth::hall_sheather_bandwidth;
pub use covariance::{
    hk_covariance, hk_covariance_with, intercept_variance, sandwich_from_densities, DensityRule,
    DENSITY_FLOOR,
};
pub use logistic::{
    fit_logistic, log_likelihood, logistic_covariance, plug_in_hessian, LogisticOptions,
};
pub use panel_fit::{
    estimate_panel, logistic_slopes, quantile_slopes, DroppedIndividual, EstimatorKind,
    PanelEstimates,
};
pub use pooled::{fit_pooled_quantile, pooled_design, PooledFit, PooledOptions};
pub use quantile::{fit_quantile, fit_quantile_bundle, fit_quantile_warm, QuantileOptions};
pub use simplex::{check_loss, quantile_objective};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("outcome is constant; estimation impossible")]
    DegenerateOutcome,
    #[error("perfect separation between zeros and ones")]
    PerfectSeparation,
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("weighted Hessian is singular (condition number {condition:.3e})")]
    SingularHessian { condition: f64 },
    #[error("density-weighted Gram matrix is singular (condition number {condition:.3e})")]
    SingularB { condition: f64 },
    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl EstimationError {
    /// Stable variant name used in reports.
    pub fn code(&self) -> &'static str {
        match self {
            EstimationError::DegenerateOutcome => "DegenerateOutcome",
            EstimationError::PerfectSeparation => "PerfectSeparation",
            EstimationError::SingularDesign => "SingularDesign",
            EstimationError::SingularHessian { .. } => "SingularHessian",
            EstimationError::SingularB { .. } => "SingularB",
            EstimationError::NonConvergence { .. } => "NonConvergence",
            EstimationError::InvalidInput(_) => "InvalidInput",
        }
    }
}

/// Point estimate for one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub individual: usize,
    /// `(α, βᵀ)ᵀ` when the design carries an intercept column, otherwise `β`.
    pub gamma: Vec<f64>,
    /// Quantile level; `None` for logistic fits.
    pub tau: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl CoefficientEstimate {
    pub fn gamma_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.gamma)
    }

    /// Coefficients after dropping the first `skip` entries (typically the intercept).
    pub fn tail(&self, skip: usize) -> Vec<f64> {
        self.gamma[skip..].to_vec()
    }
}

/// How a covariance matrix enters the pairwise combination `Σ_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceScale {
    /// Asymptotic variance; `Σ_ij = (Σ_i + Σ_j) / T`.
    PerObservation,
    /// Variance of the estimator itself; `Σ_ij = Σ_i + Σ_j`.
    AlreadyScaled,
}

impl CovarianceScale {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceScale::PerObservation => "per_observation",
            CovarianceScale::AlreadyScaled => "already_scaled",
        }
    }
}

impl std::str::FromStr for CovarianceScale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_observation" => Ok(CovarianceScale::PerObservation),
            "already_scaled" => Ok(CovarianceScale::AlreadyScaled),
            other => Err(format!("unknown covariance scale '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceFlag {
    /// Number of observations whose density denominator was floored.
    QuantileCrossing { floored: usize },
    /// The quantile spread was exactly zero.
    ZeroSpread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub individual: usize,
    pub sigma: DMatrix<f64>,
    pub scale: CovarianceScale,
    pub flags: Vec<CovarianceFlag>,
}

impl UncertaintyEstimate {
    pub fn new(individual: usize, sigma: DMatrix<f64>, scale: CovarianceScale) -> Self {
        UncertaintyEstimate {
            individual,
            sigma,
            scale,
            flags: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Lower-right block obtained by dropping the first `skip` rows and
    /// columns of the full matrix.
    pub fn trailing_block(&self, skip: usize) -> UncertaintyEstimate {
        let s = self.sigma.nrows();
        let block = self
            .sigma
            .view((skip, skip), (s - skip, s - skip))
            .into_owned();
        UncertaintyEstimate {
            individual: self.individual,
            sigma: block,
            scale: self.scale,
            flags: self.flags.clone(),
        }
    }

    pub fn has_crossing(&self) -> bool {
        self.flags
            .iter()
            .any(|f| matches!(f, CovarianceFlag::QuantileCrossing { .. }))
    }

    pub fn is_degenerate(&self) -> bool {
        self.flags.contains(&CovarianceFlag::ZeroSpread)
    }
}

/// Quantile fits at `τ` and `τ ± d` for one individual.
#[derive(Debug, Clone)]
pub struct QuantileFitBundle {
    pub center: CoefficientEstimate,
    pub upper: CoefficientEstimate,
    pub lower: CoefficientEstimate,
    pub bandwidth: f64,
}

impl QuantileFitBundle {
    pub fn tau(&self) -> f64 {
        self.center.tau.unwrap_or(f64::NAN)
    }
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
