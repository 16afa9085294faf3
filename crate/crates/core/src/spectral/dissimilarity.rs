use nalgebra::{DMatrix, DVector};

use super::SpectralError;
use crate::estimators::{CovarianceScale, UncertaintyEstimate};

/// Relative tolerance for symmetry and positive semi-definiteness checks.
const SYM_TOL: f64 = 1e-10;

/// Symmetric `n × n` matrix of pairwise dissimilarities with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    values: DMatrix<f64>,
}

impl DissimilarityMatrix {
    /// Validates symmetry, a zero diagonal and finite non-negative entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self, SpectralError> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(SpectralError::DimensionMismatch(format!(
                "dissimilarity must be square, got {}x{}",
                n,
                values.ncols()
            )));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(SpectralError::InvalidDissimilarity(format!(
                    "diagonal entry {i} is {}",
                    values[(i, i)]
                )));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !(v.is_finite() && v >= 0.0) || v != values[(j, i)] {
                    return Err(SpectralError::InvalidDissimilarity(format!(
                        "entry ({i}, {j}) = {v} must be finite, non-negative and symmetric"
                    )));
                }
            }
        }
        Ok(DissimilarityMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Multiplies every entry by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> DissimilarityMatrix {
        DissimilarityMatrix {
            values: &self.values * factor,
        }
    }

    /// Simultaneous row/column permutation: entry `(a, b)` of the result is
    /// entry `(perm[a], perm[b])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DissimilarityMatrix {
        let n = self.n();
        DissimilarityMatrix {
            values: DMatrix::from_fn(n, n, |a, b| self.values[(perm[a], perm[b])]),
        }
    }
}

fn frobenius_scale(s: &DMatrix<f64>) -> f64 {
    s.norm().max(f64::MIN_POSITIVE)
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<(), SpectralError> {
    if !s.is_square() {
        return Err(SpectralError::NotSymmetric);
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYM_TOL * frobenius_scale(s) {
        return Err(SpectralError::NotSymmetric);
    }
    Ok(())
}

/// `S^{-1/2} = Q diag(max(λ, ε)^{-1/2}) Qᵀ` with `ε = 1e-10 · max(λ)`.
pub fn matrix_inverse_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>, SpectralError> {
    check_symmetric(s)?;
    if s.nrows() == 1 {
        let v = s[(0, 0)];
        if !(v > 0.0) {
            return Err(SpectralError::NonPositiveCombined { i: 0, j: 0 });
        }
        return Ok(DMatrix::from_element(1, 1, 1.0 / v.sqrt()));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(SpectralError::NonPositiveCombined { i: 0, j: 0 });
    }
    let floor = 1e-10 * max;
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose())
}

/// How the pairwise covariance `Σ_ij` is assembled from individual matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum PeriodWeights {
    /// Common number of periods `T`.
    Common(f64),
    /// Individual `T_i`; per-observation matrices enter as `Σ_i / T_i`.
    PerIndividual(Vec<f64>),
}

fn check_psd(s: &DMatrix<f64>) -> bool {
    let eig = s.clone().symmetric_eigenvalues();
    eig.min() >= -SYM_TOL * frobenius_scale(s)
}

/// `V_ij = ‖Σ_ij^{-1/2}(β_i − β_j)‖_∞`.
///
/// With per-observation covariances `Σ_ij = (Σ_i + Σ_j) / T` (or
/// `Σ_i/T_i + Σ_j/T_j` under individual weights); already-scaled covariances
/// combine as `Σ_i + Σ_j`.
pub fn build_dissimilarity(
    betas: &[Vec<f64>],
    uncertainties: &[UncertaintyEstimate],
    weights: &PeriodWeights,
) -> Result<DissimilarityMatrix, SpectralError> {
    let n = betas.len();
    if uncertainties.len() != n {
        return Err(SpectralError::DimensionMismatch(format!(
            "{n} estimates but {} uncertainty matrices",
            uncertainties.len()
        )));
    }
    if n == 0 {
        return DissimilarityMatrix::new(DMatrix::zeros(0, 0));
    }
    let s = betas[0].len();
    let scale = uncertainties[0].scale;
    for (i, (b, u)) in betas.iter().zip(uncertainties).enumerate() {
        if b.len() != s || u.dim() != s {
            return Err(SpectralError::DimensionMismatch(format!(
                "individual {i}: estimate of length {} and covariance {}x{} (expected {s})",
                b.len(),
                u.dim(),
                u.dim()
            )));
        }
        if u.scale != scale {
            return Err(SpectralError::ScaleMismatch { index: i });
        }
        if b.iter().chain(u.sigma.iter()).any(|v| !v.is_finite()) {
            return Err(SpectralError::InvalidDissimilarity(format!(
                "individual {i} has non-finite inputs"
            )));
        }
        check_symmetric(&u.sigma).map_err(|_| SpectralError::NotSymmetricAt { index: i })?;
    }
    if let PeriodWeights::PerIndividual(w) = weights {
        if w.len() != n {
            return Err(SpectralError::DimensionMismatch(format!(
                "{} period weights for {n} individuals",
                w.len()
            )));
        }
        if w.iter().any(|&t| !(t > 0.0)) {
            return Err(SpectralError::InvalidDissimilarity(
                "period weights must be positive".into(),
            ));
        }
    }
    if let PeriodWeights::Common(t) = weights {
        if !(*t > 0.0) {
            return Err(SpectralError::InvalidDissimilarity(format!(
                "number of periods must be positive, got {t}"
            )));
        }
    }

    let vecs: Vec<DVector<f64>> = betas
        .iter()
        .map(|b| DVector::from_column_slice(b))
        .collect();
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let combined = match (scale, weights) {
                (CovarianceScale::AlreadyScaled, _) => {
                    &uncertainties[i].sigma + &uncertainties[j].sigma
                }
                (CovarianceScale::PerObservation, PeriodWeights::Common(t)) => {
                    (&uncertainties[i].sigma + &uncertainties[j].sigma) / *t
                }
                (CovarianceScale::PerObservation, PeriodWeights::PerIndividual(w)) => {
                    &uncertainties[i].sigma / w[i] + &uncertainties[j].sigma / w[j]
                }
            };
            if !check_psd(&combined) {
                return Err(SpectralError::NonPositiveCombined { i, j });
            }
            let whitening = matrix_inverse_sqrt(&combined).map_err(|e| match e {
                SpectralError::NonPositiveCombined { .. } => {
                    SpectralError::NonPositiveCombined { i, j }
                }
                other => other,
            })?;
            let diff = &vecs[i] - &vecs[j];
            let value = (whitening * diff).amax();
            v[(i, j)] = value;
            v[(j, i)] = value;
        }
    }
    DissimilarityMatrix::new(v)
}

/// Dissimilarity with every `Σ_ij` replaced by the identity, i.e. the
/// sup-norm distance between raw estimates.
pub fn identity_dissimilarity(betas: &[Vec<f64>]) -> Result<DissimilarityMatrix, SpectralError> {
    let n = betas.len();
    let s = betas.first().map_or(0, |b| b.len());
    if betas.iter().any(|b| b.len() != s) {
        return Err(SpectralError::DimensionMismatch(
            "estimates differ in length".into(),
        ));
    }
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = betas[i]
                .iter()
                .zip(&betas[j])
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            v[(i, j)] = d;
            v[(j, i)] = d;
        }
    }
    DissimilarityMatrix::new(v)
}
