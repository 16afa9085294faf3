//! Latent group recovery for panel data.
//!
//! Individual-level estimates and their uncertainty are turned into a
//! covariance-weighted dissimilarity matrix, which is clustered with
//! normalized-Laplacian spectral clustering. The number of groups can be
//! chosen with a relative eigen-gap heuristic.

pub mod estimators;
pub mod metrics;
pub mod panel;
pub mod simulation;
pub mod spectral;
