//! Agreement between an estimated grouping and the true one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("labelings have different lengths ({truth} vs {estimate})")]
    LengthMismatch { truth: usize, estimate: usize },
    #[error("labelings are empty")]
    Empty,
    #[error("labels must be positive integers (found 0 at position {position})")]
    ZeroLabel { position: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub perfect: bool,
    /// Fraction of individuals labelled correctly under the best bijection.
    pub average: f64,
    /// `best_permutation[k]` is the estimated label matched to true label `k + 1`.
    pub best_permutation: Vec<usize>,
    /// The two label alphabets differed in size and the smaller one was
    /// padded with empty groups.
    pub padded: bool,
}

/// Maximum-weight perfect matching on a square matrix; returns the column
/// assigned to each row.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let top = weights
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |m, &w| m.max(w));
    let cost = |i: usize, j: usize| top - weights[i][j];
    // Kuhn-Munkres with potentials, 1-based with a sentinel column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn alphabet(labels: &[usize]) -> Result<usize, MetricsError> {
    if let Some(position) = labels.iter().position(|&l| l == 0) {
        return Err(MetricsError::ZeroLabel { position });
    }
    Ok(labels.iter().copied().max().unwrap_or(0))
}

/// Best-over-bijections share of matching labels. Labels are `1..=G`; when
/// the two alphabets differ in size the smaller is padded with empty groups.
pub fn average_match(truth: &[usize], estimate: &[usize]) -> Result<MatchScore, MetricsError> {
    if truth.len() != estimate.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            estimate: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    let g_true = alphabet(truth)?;
    let g_est = alphabet(estimate)?;
    let g = g_true.max(g_est);
    let mut confusion = vec![vec![0.0; g]; g];
    for (&a, &b) in truth.iter().zip(estimate) {
        confusion[a - 1][b - 1] += 1.0;
    }
    let assignment = max_weight_assignment(&confusion);
    let hits: f64 = assignment
        .iter()
        .enumerate()
        .map(|(k, &j)| confusion[k][j])
        .sum();
    let n = truth.len();
    let correct = hits.round() as usize;
    Ok(MatchScore {
        perfect: correct == n,
        average: correct as f64 / n as f64,
        best_permutation: assignment.iter().map(|j| j + 1).collect(),
        padded: g_true != g_est,
    })
}

pub fn perfect_match(truth: &[usize], estimate: &[usize]) -> Result<bool, MetricsError> {
    average_match(truth, estimate).map(|s| s.perfect)
}
