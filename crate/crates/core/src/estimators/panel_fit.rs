use serde::{Deserialize, Serialize};

use super::{
    fit_logistic, fit_pooled_quantile, fit_quantile_bundle, hall_sheather_bandwidth,
    hk_covariance_with, intercept_variance, logistic_covariance, DensityRule, EstimationError,
    LogisticOptions, PooledOptions, QuantileOptions, UncertaintyEstimate,
};
use crate::panel::PanelDataset;

/// Per-individual estimator used to summarise a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Logistic regression with intercept; slopes are grouped.
    Logistic,
    /// Quantile regression with intercept per individual; slopes are grouped.
    QrSlopes,
    /// Pooled quantile regression; individual intercepts are grouped.
    QrPooled,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Logistic => "logistic",
            EstimatorKind::QrSlopes => "qr-slopes",
            EstimatorKind::QrPooled => "qr-pooled",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(EstimatorKind::Logistic),
            "qr-slopes" => Ok(EstimatorKind::QrSlopes),
            "qr-pooled" => Ok(EstimatorKind::QrPooled),
            other => Err(format!("unknown estimator '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedIndividual {
    pub index: usize,
    pub reason: EstimationError,
}

/// Grouping coefficients and their covariances for the individuals that
/// could be estimated.
#[derive(Debug, Clone)]
pub struct PanelEstimates {
    pub kind: EstimatorKind,
    /// Panel indices of the retained individuals.
    pub kept: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub uncertainties: Vec<UncertaintyEstimate>,
    pub dropped: Vec<DroppedIndividual>,
    pub tau: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Common slopes of the pooled fit.
    pub common_beta: Option<Vec<f64>>,
}

/// Logistic fit plus the slope block of its plug-in covariance.
pub fn logistic_slopes(
    panel: &PanelDataset,
    i: usize,
) -> Result<(Vec<f64>, UncertaintyEstimate), EstimationError> {
    let x = panel.individual_design(i);
    let mut est = fit_logistic(
        &x,
        &panel.individual_response(i),
        LogisticOptions::default(),
    )?;
    est.individual = i;
    let cov = logistic_covariance(&x, &est)?;
    Ok((est.tail(1), cov.trailing_block(1)))
}

/// Quantile fit plus the slope block of its sandwich covariance.
pub fn quantile_slopes(
    panel: &PanelDataset,
    i: usize,
    tau: f64,
    rule: DensityRule,
) -> Result<(Vec<f64>, UncertaintyEstimate), EstimationError> {
    let x = panel.individual_design(i);
    let mut bundle = fit_quantile_bundle(
        &x,
        &panel.individual_response(i),
        tau,
        &QuantileOptions::default(),
    )?;
    bundle.center.individual = i;
    let cov = hk_covariance_with(&bundle, &x, rule)?;
    Ok((bundle.center.tail(1), cov.trailing_block(1)))
}

/// Runs `kind` on every individual (`rule` only affects `QrSlopes`). Individual failures are collected in
/// `dropped`; a failing pooled fit is returned as an error.
pub fn estimate_panel(
    panel: &PanelDataset,
    kind: EstimatorKind,
    tau: f64,
    rule: DensityRule,
) -> Result<PanelEstimates, EstimationError> {
    let mut out = PanelEstimates {
        kind,
        kept: Vec::new(),
        betas: Vec::new(),
        uncertainties: Vec::new(),
        dropped: Vec::new(),
        tau: None,
        bandwidth: None,
        common_beta: None,
    };
    match kind {
        EstimatorKind::Logistic | EstimatorKind::QrSlopes => {
            if kind == EstimatorKind::QrSlopes {
                out.tau = Some(tau);
                out.bandwidth = Some(hall_sheather_bandwidth(panel.periods(), tau, 0.05));
            }
            for i in 0..panel.n() {
                let fitted = if kind == EstimatorKind::Logistic {
                    logistic_slopes(panel, i)
                } else {
                    quantile_slopes(panel, i, tau, rule)
                };
                match fitted {
                    Ok((beta, cov)) => {
                        out.kept.push(i);
                        out.betas.push(beta);
                        out.uncertainties.push(cov);
                    }
                    Err(reason) => out.dropped.push(DroppedIndividual { index: i, reason }),
                }
            }
        }
        EstimatorKind::QrPooled => {
            let d = hall_sheather_bandwidth(panel.periods(), tau, 0.05);
            if !(d > 0.0) {
                return Err(EstimationError::InvalidInput(format!(
                    "no admissible bandwidth at tau = {tau}"
                )));
            }
            let opts = PooledOptions::default();
            let center = fit_pooled_quantile(panel, tau, &opts)?;
            let upper = fit_pooled_quantile(panel, tau + d, &opts)?;
            let lower = fit_pooled_quantile(panel, tau - d, &opts)?;
            for i in 0..panel.n() {
                let cov = intercept_variance(i, upper.alphas[i], lower.alphas[i], tau, d)?;
                out.kept.push(i);
                out.betas.push(vec![center.alphas[i]]);
                out.uncertainties.push(cov);
            }
            out.tau = Some(tau);
            out.bandwidth = Some(d);
            out.common_beta = Some(center.beta);
        }
    }
    Ok(out)
}
