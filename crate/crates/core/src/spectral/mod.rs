//! Dissimilarity construction, normalized-Laplacian spectral clustering and
//! eigen-gap selection of the number of groups.

mod dissimilarity;
mod kmeans;
mod laplacian;

use thiserror::Error;

pub use dissimilarity::{
    build_dissimilarity, identity_dissimilarity, matrix_inverse_sqrt, DissimilarityMatrix,
    PeriodWeights,
};
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};
pub use laplacian::{
    adjacency, canonical_labels, decompose, normalized_laplacian, select_num_groups, sorted_eigen,
    spectral_cluster, GroupAssignment, GroupCountSelection, SpectralDecomposition, DEFAULT_G_MAX,
    GAP_DENOMINATOR_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("covariance of individual {index} is not symmetric")]
    NotSymmetricAt { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance of individual {index} uses a different scale from the first individual")]
    ScaleMismatch { index: usize },
    #[error("combined covariance of individuals {i} and {j} is not positive semi-definite")]
    NonPositiveCombined { i: usize, j: usize },
    #[error("invalid dissimilarity: {0}")]
    InvalidDissimilarity(String),
    #[error("symmetric eigensolver did not converge")]
    EigenFailure,
    #[error("number of groups {groups} must lie in 1..={n}")]
    InvalidGroupCount { groups: usize, n: usize },
    #[error("n >= 3 required for selection (got {n}); n >= 1 for clustering at G = 1")]
    TooFewIndividuals { n: usize },
    #[error("number of periods must be at least 2, got {0}")]
    InvalidPeriods(f64),
}
