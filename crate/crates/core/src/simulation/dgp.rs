//! Data-generating processes for the Monte-Carlo designs.
//!
//! Gaussian draws use the Ziggurat sampler of `rand_distr::StandardNormal`;
//! `t(3)` draws are `Z / sqrt(χ²₃ / 3)` with the chi-square built from three
//! independent standard normals; logistic errors use the inverse CDF
//! `ln(u / (1 − u))` with `u ∈ (0, 1)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{rep_rng, SimRng};
use crate::panel::{PanelDataset, ResponseKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Binary outcomes, logistic errors, grouping on slopes.
    Logistic,
    /// Three groups of slopes, heteroskedastic errors.
    Model1,
    /// Four groups of slopes in two close pairs.
    Model2,
    /// Location-scale shift model with grouped intercepts and a common slope.
    Model3,
    /// Three asymmetric groups of slopes with exact equal allocation.
    Model4,
}

impl ModelKind {
    pub fn groups(&self) -> usize {
        match self {
            ModelKind::Model2 => 4,
            _ => 3,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, ModelKind::Logistic)
    }

    /// Group allocation is exact (balanced) rather than drawn at random.
    pub fn balanced_allocation(&self) -> bool {
        matches!(self, ModelKind::Model3 | ModelKind::Model4)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Model1 => "model1",
            ModelKind::Model2 => "model2",
            ModelKind::Model3 => "model3",
            ModelKind::Model4 => "model4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    T3,
}

pub(crate) fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

fn error_draw(rng: &mut SimRng, dist: ErrorDist) -> f64 {
    match dist {
        ErrorDist::Normal => normal(rng),
        ErrorDist::T3 => {
            let z = normal(rng);
            let chi2: f64 = (0..3).map(|_| normal(rng).powi(2)).sum();
            z / (chi2 / 3.0).sqrt()
        }
    }
}

fn logistic_draw(rng: &mut SimRng) -> f64 {
    let u: f64 = rng.sample(Open01);
    (u / (1.0 - u)).ln()
}

/// One individual's series: `T × p` covariates and `T` responses.
#[derive(Debug, Clone)]
pub struct IndividualDraw {
    pub group: usize,
    pub covariates: DMatrix<f64>,
    pub response: DVector<f64>,
}

const LOGISTIC_SLOPES: [[f64; 2]; 3] = [[-4.0, 1.0], [0.0, 1.0], [4.0, 1.0]];
const MODEL1_SLOPES: [[f64; 2]; 3] = [[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]];
const MODEL2_SLOPES: [[f64; 2]; 4] = [[0.1, 0.1], [0.2, 0.2], [3.0, 3.0], [3.1, 3.1]];
const MODEL4_SLOPES: [[f64; 2]; 3] = [[-5.0, 1.0], [0.0, 1.0], [3.0, 1.0]];
const MODEL3_INTERCEPTS: [f64; 3] = [1.0, 2.0, 3.0];

/// Draws one individual of `model` belonging to `group` (0-based).
pub fn draw_individual(
    model: ModelKind,
    group: usize,
    periods: usize,
    errors: ErrorDist,
    rng: &mut SimRng,
) -> IndividualDraw {
    let mut x = DMatrix::zeros(periods, if model == ModelKind::Model3 { 1 } else { 2 });
    let mut y = DVector::zeros(periods);
    match model {
        ModelKind::Logistic | ModelKind::Model4 => {
            let alpha = 1.0;
            let (beta, sd1, sd2) = if model == ModelKind::Logistic {
                (LOGISTIC_SLOPES[group], 2.0, 0.2)
            } else {
                (MODEL4_SLOPES[group], 1.0, 0.05f64.sqrt())
            };
            let eta = normal(rng);
            for t in 0..periods {
                let x1 = 0.5 * alpha + eta + sd1 * normal(rng);
                let x2 = 0.5 * alpha + eta + sd2 * normal(rng);
                x[(t, 0)] = x1;
                x[(t, 1)] = x2;
                let index = alpha + beta[0] * x1 + beta[1] * x2;
                y[t] = if model == ModelKind::Logistic {
                    if index >= logistic_draw(rng) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    index + error_draw(rng, errors)
                };
            }
        }
        ModelKind::Model1 | ModelKind::Model2 => {
            let (alpha, beta) = if model == ModelKind::Model1 {
                (rng.gen::<f64>(), MODEL1_SLOPES[group])
            } else {
                (1.0, MODEL2_SLOPES[group])
            };
            for t in 0..periods {
                let x1 = 0.3 * alpha + normal(rng);
                let x2: f64 = rng.gen();
                x[(t, 0)] = x1;
                x[(t, 1)] = x2;
                let e = error_draw(rng, errors);
                y[t] = alpha + beta[0] * x1 + beta[1] * x2 + 0.5 * x2 * e;
            }
        }
        ModelKind::Model3 => {
            let alpha = MODEL3_INTERCEPTS[group];
            let shift = normal(rng);
            for t in 0..periods {
                let xt = shift + normal(rng);
                x[(t, 0)] = xt;
                let e = error_draw(rng, errors);
                y[t] = alpha + xt + (1.0 + 0.1 * xt) * e;
            }
        }
    }
    IndividualDraw {
        group,
        covariates: x,
        response: y,
    }
}

/// Group labels (0-based): uniform draws, or an exact balanced allocation in
/// random order for models that require it.
pub fn draw_groups(model: ModelKind, n: usize, rng: &mut SimRng) -> Vec<usize> {
    let g = model.groups();
    if model.balanced_allocation() {
        let mut labels: Vec<usize> = (0..n).map(|i| i % g).collect();
        labels.shuffle(rng);
        labels
    } else {
        (0..n).map(|_| rng.gen_range(0..g)).collect()
    }
}

/// Uniform group draw for a replacement individual.
pub fn draw_group(model: ModelKind, rng: &mut SimRng) -> usize {
    rng.gen_range(0..model.groups())
}

/// Simulated panel with its true 1-based group labels.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    pub truth: Vec<usize>,
}

pub fn assemble(draws: &[IndividualDraw], periods: usize, binary: bool) -> SimulatedPanel {
    let n = draws.len();
    let p = draws.first().map_or(0, |d| d.covariates.ncols());
    let mut x = DMatrix::zeros(n * periods, p);
    let mut y = DVector::zeros(n * periods);
    for (i, d) in draws.iter().enumerate() {
        x.view_mut((i * periods, 0), (periods, p))
            .copy_from(&d.covariates);
        y.rows_mut(i * periods, periods).copy_from(&d.response);
    }
    let kind = if binary {
        ResponseKind::Binary
    } else {
        ResponseKind::Continuous
    };
    let panel = PanelDataset::with_numbered_ids(n, periods, x, y, kind)
        .expect("simulated panel is balanced and finite");
    SimulatedPanel {
        panel,
        truth: draws.iter().map(|d| d.group + 1).collect(),
    }
}

/// Draws a full panel of `n` individuals from `rng`.
pub fn generate(
    model: ModelKind,
    n: usize,
    periods: usize,
    errors: ErrorDist,
    rng: &mut SimRng,
) -> SimulatedPanel {
    let groups = draw_groups(model, n, rng);
    let draws: Vec<IndividualDraw> = groups
        .iter()
        .map(|&g| draw_individual(model, g, periods, errors, rng))
        .collect();
    assemble(&draws, periods, model.is_binary())
}

pub fn gen_logistic(n: usize, periods: usize, seed: u64) -> SimulatedPanel {
    generate(
        ModelKind::Logistic,
        n,
        periods,
        ErrorDist::Normal,
        &mut rep_rng(seed, 0),
    )
}

pub fn gen_model1(n: usize, periods: usize, errors: ErrorDist, seed: u64) -> SimulatedPanel {
    generate(ModelKind::Model1, n, periods, errors, &mut rep_rng(seed, 0))
}

pub fn gen_model2(n: usize, periods: usize, errors: ErrorDist, seed: u64) -> SimulatedPanel {
    generate(ModelKind::Model2, n, periods, errors, &mut rep_rng(seed, 0))
}

pub fn gen_model3(n: usize, periods: usize, errors: ErrorDist, seed: u64) -> SimulatedPanel {
    generate(ModelKind::Model3, n, periods, errors, &mut rep_rng(seed, 0))
}

pub fn gen_model4(n: usize, periods: usize, errors: ErrorDist, seed: u64) -> SimulatedPanel {
    generate(ModelKind::Model4, n, periods, errors, &mut rep_rng(seed, 0))
}
