use nalgebra::{DMatrix, DVector};

use super::{
    symmetric_condition, CoefficientEstimate, CovarianceScale, EstimationError, UncertaintyEstimate,
};

/// Norm of the coefficient vector beyond which the fit is declared divergent.
const DIVERGENCE_NORM: f64 = 30.0;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Sup-norm tolerance on the gradient of the mean log-likelihood.
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// `log(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Mean log-likelihood `T⁻¹ Σ [y_t z_tᵀγ − log(1 + exp(z_tᵀγ))]`.
pub fn log_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
    let eta = x * gamma;
    let total: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &yt)| yt * e - softplus(e))
        .sum();
    total / x.nrows() as f64
}

fn gradient(x: &DMatrix<f64>, y: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
    let resid = DVector::from_iterator(
        y.len(),
        y.iter().zip(eta.iter()).map(|(&yt, &e)| yt - sigmoid(e)),
    );
    x.tr_mul(&resid) / x.nrows() as f64
}

/// `T⁻¹ Σ w_t z_t z_tᵀ` with logistic weights `w_t = e^η / (1 + e^η)²`; the
/// negative Hessian of the mean log-likelihood.
pub fn plug_in_hessian(x: &DMatrix<f64>, gamma: &DVector<f64>) -> DMatrix<f64> {
    let eta = x * gamma;
    weighted_gram(x, &eta)
}

fn weighted_gram(x: &DMatrix<f64>, eta: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (t, &e) in eta.iter().enumerate() {
        let p = sigmoid(e);
        let w = p * (1.0 - p);
        scaled.row_mut(t).scale_mut(w);
    }
    let mut h = x.tr_mul(&scaled) / x.nrows() as f64;
    h = (&h + h.transpose()) * 0.5;
    h
}

/// Maximum-likelihood logistic regression by damped Newton iterations.
///
/// `x` is the full design (including any intercept column), `y` holds 0/1
/// outcomes.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    opts: LogisticOptions,
) -> Result<CoefficientEstimate, EstimationError> {
    let (t, s) = x.shape();
    if y.len() != t {
        return Err(EstimationError::InvalidInput(format!(
            "response length {} does not match design rows {t}",
            y.len()
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(EstimationError::InvalidInput(
            "binary response required".into(),
        ));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == t {
        return Err(EstimationError::DegenerateOutcome);
    }
    if t < s + 1 {
        return Err(EstimationError::InvalidInput(format!(
            "need at least {} observations, got {t}",
            s + 1
        )));
    }
    let gram = x.tr_mul(x);
    if symmetric_condition(&gram) > MAX_CONDITION {
        return Err(EstimationError::SingularDesign);
    }

    let mut gamma = DVector::zeros(s);
    let mut eta = x * &gamma;
    let mut loglik = log_likelihood(x, y, &gamma);
    for iter in 0..opts.max_iter {
        let grad = gradient(x, y, &eta);
        if grad.amax() <= opts.tol {
            // A finite maximizer always misclassifies some observation; when the
            // linear predictor separates the outcomes the iterates have only
            // stalled on the flat tail of a divergent likelihood.
            let separated = eta
                .iter()
                .zip(y.iter())
                .all(|(&e, &yt)| if yt == 1.0 { e > 0.0 } else { e < 0.0 });
            if separated {
                return Err(EstimationError::PerfectSeparation);
            }
            return Ok(CoefficientEstimate {
                individual: 0,
                gamma: gamma.iter().copied().collect(),
                tau: None,
                converged: true,
                iterations: iter,
            });
        }
        let hess = weighted_gram(x, &eta);
        if symmetric_condition(&hess) > MAX_CONDITION {
            return Err(EstimationError::PerfectSeparation);
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(EstimationError::PerfectSeparation),
        };

        // step halving until the likelihood does not decrease
        let mut factor = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &gamma + &step * factor;
            let cand_ll = log_likelihood(x, y, &candidate);
            if cand_ll >= loglik - 1e-15 * loglik.abs().max(1.0) {
                gamma = candidate;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            factor *= 0.5;
        }
        if !accepted {
            return Err(EstimationError::NonConvergence {
                iterations: iter + 1,
            });
        }
        if gamma.norm() > DIVERGENCE_NORM {
            return Err(EstimationError::PerfectSeparation);
        }
        eta = x * &gamma;
    }
    Err(EstimationError::NonConvergence {
        iterations: opts.max_iter,
    })
}

/// Plug-in asymptotic covariance `(T⁻¹ Σ w_t z_t z_tᵀ)⁻¹` at the fitted
/// coefficients.
pub fn logistic_covariance(
    x: &DMatrix<f64>,
    estimate: &CoefficientEstimate,
) -> Result<UncertaintyEstimate, EstimationError> {
    if !estimate.converged {
        return Err(EstimationError::InvalidInput(
            "logistic fit did not converge".into(),
        ));
    }
    let hess = plug_in_hessian(x, &estimate.gamma_vector());
    let condition = symmetric_condition(&hess);
    if condition > MAX_CONDITION {
        return Err(EstimationError::SingularHessian { condition });
    }
    let inv = hess
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(EstimationError::SingularHessian { condition })?;
    let sigma = (&inv + inv.transpose()) * 0.5;
    Ok(UncertaintyEstimate::new(
        estimate.individual,
        sigma,
        CovarianceScale::PerObservation,
    ))
}
