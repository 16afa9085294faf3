use nalgebra::{DMatrix, DVector};

use super::dissimilarity::DissimilarityMatrix;
use super::kmeans::{kmeans, KMeansOptions};
use super::SpectralError;

/// Denominator guard of the relative eigen-gap.
pub const GAP_DENOMINATOR_FLOOR: f64 = 1e-12;
/// Default upper bound on the number of groups considered by the selector.
pub const DEFAULT_G_MAX: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub adjacency: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Eigenvectors of the `G` smallest eigenvalues, in columns.
    pub eigenvectors: DMatrix<f64>,
    /// `eigenvectors` with unit-length rows.
    pub embedding: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    /// 1-based labels, numbered in order of first appearance.
    pub labels: Vec<usize>,
    pub groups: usize,
    pub kmeans_objective: f64,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCountSelection {
    pub g_hat: usize,
    /// `1 − λ` for the ascending eigenvalues `λ` of the scaled Laplacian.
    pub lambda_tilde: Vec<f64>,
    /// Relative gaps for `g = 1, …, n − 1`.
    pub ratios: Vec<f64>,
    /// Largest `g` that was scanned.
    pub g_max: usize,
}

/// `A = exp(−V)` off the diagonal with unit diagonal.
pub fn adjacency(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (-v[(i, j)]).exp() })
}

/// `L = D^{-1/2}(D − A)D^{-1/2}`, returned with the degree vector.
pub fn normalized_laplacian(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let degrees = DVector::from_fn(n, |i, _| a.row(i).sum());
    let inv_sqrt = degrees.map(|d| 1.0 / d.sqrt());
    let l = DMatrix::from_fn(n, n, |i, j| {
        let dij = if i == j { degrees[i] } else { 0.0 };
        (dij - a[(i, j)]) * inv_sqrt[i] * inv_sqrt[j]
    });
    (l, degrees)
}

/// Full symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), SpectralError> {
    let n = m.nrows();
    let eig = m
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(SpectralError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(n, |k, _| eig.eigenvalues[order[k]]);
    let vectors = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
    Ok((values, vectors))
}

/// Steps one to four of the clustering algorithm: adjacency, degrees,
/// Laplacian and the row-normalized embedding from `groups` eigenvectors.
pub fn decompose(
    v: &DissimilarityMatrix,
    groups: usize,
) -> Result<SpectralDecomposition, SpectralError> {
    let n = v.n();
    if groups == 0 || groups > n {
        return Err(SpectralError::InvalidGroupCount { groups, n });
    }
    let adjacency = adjacency(v.values());
    let (laplacian, degrees) = normalized_laplacian(&adjacency);
    let (eigenvalues, vectors) = sorted_eigen(&laplacian)?;
    let eigenvectors = vectors.columns(0, groups).into_owned();
    let mut embedding = eigenvectors.clone();
    for mut row in embedding.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(SpectralDecomposition {
        adjacency,
        degrees,
        laplacian,
        eigenvalues,
        eigenvectors,
        embedding,
    })
}

/// Renumbers labels 1, 2, … in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len() + 1;
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// Spectral clustering of `v` into `groups` clusters.
pub fn spectral_cluster(
    v: &DissimilarityMatrix,
    groups: usize,
    opts: &KMeansOptions,
) -> Result<(GroupAssignment, SpectralDecomposition), SpectralError> {
    let decomposition = decompose(v, groups)?;
    let km = kmeans(&decomposition.embedding, groups, opts);
    let assignment = GroupAssignment {
        labels: canonical_labels(&km.labels),
        groups,
        kmeans_objective: km.objective,
        restarts_used: km.restarts_used,
    };
    Ok((assignment, decomposition))
}

/// Relative eigen-gap selector on the dissimilarity scaled by
/// `2 / sqrt(log n · log T)`.
pub fn select_num_groups(
    v: &DissimilarityMatrix,
    periods: f64,
    g_max: usize,
) -> Result<GroupCountSelection, SpectralError> {
    let n = v.n();
    if n < 3 {
        return Err(SpectralError::TooFewIndividuals { n });
    }
    if !(periods >= 2.0) {
        return Err(SpectralError::InvalidPeriods(periods));
    }
    if g_max == 0 {
        return Err(SpectralError::InvalidGroupCount { groups: 0, n });
    }
    let scale = 2.0 / ((n as f64).ln() * periods.ln()).sqrt();
    let scaled = v.scaled(scale);
    let (laplacian, _) = normalized_laplacian(&adjacency(scaled.values()));
    let (eigenvalues, _) = sorted_eigen(&laplacian)?;
    let lambda_tilde: Vec<f64> = eigenvalues.iter().map(|l| 1.0 - l).collect();
    let ratios: Vec<f64> = lambda_tilde
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / w[1].max(GAP_DENOMINATOR_FLOOR))
        .collect();
    let upper = g_max.min(n - 1);
    let mut g_hat = 1;
    for g in 2..=upper {
        if ratios[g - 1] > ratios[g_hat - 1] {
            g_hat = g;
        }
    }
    Ok(GroupCountSelection {
        g_hat,
        lambda_tilde,
        ratios,
        g_max: upper,
    })
}
