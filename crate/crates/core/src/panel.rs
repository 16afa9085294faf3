//! Balanced panel container.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Continuous,
    Binary,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("panel must contain at least one individual and one period")]
    Empty,
    #[error("expected {expected} rows for {n} individuals x {periods} periods, got {got}")]
    Unbalanced {
        n: usize,
        periods: usize,
        expected: usize,
        got: usize,
    },
    #[error("binary panel has non 0/1 response {value} at row {row}")]
    NonBinary { row: usize, value: f64 },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("{0} ids supplied for {1} individuals")]
    IdCount(usize, usize),
}

/// Observations `(x_it, Y_it)` for `n` individuals over a common number of
/// periods. Rows are stored individual-major: row `i * T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    ids: Vec<String>,
    periods: usize,
    covariates: DMatrix<f64>,
    response: DVector<f64>,
    kind: ResponseKind,
}

impl PanelDataset {
    pub fn new(
        ids: Vec<String>,
        periods: usize,
        covariates: DMatrix<f64>,
        response: DVector<f64>,
        kind: ResponseKind,
    ) -> Result<Self, PanelError> {
        let n = ids.len();
        if n == 0 || periods == 0 {
            return Err(PanelError::Empty);
        }
        let expected = n * periods;
        if covariates.nrows() != expected || response.len() != expected {
            return Err(PanelError::Unbalanced {
                n,
                periods,
                expected,
                got: covariates.nrows().max(response.len()),
            });
        }
        for row in 0..expected {
            let y = response[row];
            if !y.is_finite() || covariates.row(row).iter().any(|v| !v.is_finite()) {
                return Err(PanelError::NonFinite { row });
            }
            if kind == ResponseKind::Binary && y != 0.0 && y != 1.0 {
                return Err(PanelError::NonBinary { row, value: y });
            }
        }
        Ok(PanelDataset {
            ids,
            periods,
            covariates,
            response,
            kind,
        })
    }

    /// Panel with ids `"1"..="n"`.
    pub fn with_numbered_ids(
        n: usize,
        periods: usize,
        covariates: DMatrix<f64>,
        response: DVector<f64>,
        kind: ResponseKind,
    ) -> Result<Self, PanelError> {
        let ids = (1..=n).map(|i| i.to_string()).collect();
        Self::new(ids, periods, covariates, response, kind)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Covariate dimension `p` (without intercept).
    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// `T × p` covariates of individual `i`.
    pub fn individual_covariates(&self, i: usize) -> DMatrix<f64> {
        self.covariates
            .rows(i * self.periods, self.periods)
            .into_owned()
    }

    /// `T × (p + 1)` design `z_it = (1, x_itᵀ)ᵀ`.
    pub fn individual_design(&self, i: usize) -> DMatrix<f64> {
        crate::estimators::with_intercept(&self.individual_covariates(i))
    }

    pub fn individual_response(&self, i: usize) -> DVector<f64> {
        self.response
            .rows(i * self.periods, self.periods)
            .into_owned()
    }
}
