use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dgp::{
    assemble, draw_group, draw_groups, draw_individual, generate, ErrorDist, ModelKind,
    SimulatedPanel,
};
use super::rng::{rep_rng, rep_seed, substream_seed};
use crate::estimators::{
    estimate_panel, logistic_slopes, DensityRule, EstimationError, EstimatorKind,
    UncertaintyEstimate,
};
use crate::metrics::average_match;
use crate::spectral::{
    build_dissimilarity, canonical_labels, identity_dissimilarity, kmeans, select_num_groups,
    spectral_cluster, KMeansOptions, PeriodWeights, DEFAULT_G_MAX,
};

fn default_tau() -> f64 {
    0.5
}
fn default_errors() -> ErrorDist {
    ErrorDist::Normal
}
fn default_restarts() -> usize {
    50
}
fn default_g_max() -> usize {
    DEFAULT_G_MAX
}
fn yes() -> bool {
    true
}

/// Which methods are run in each repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOptions {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_g_max")]
    pub g_max: usize,
    /// Covariance-weighted dissimilarity for the main method; `false` swaps in
    /// the identity.
    #[serde(default = "yes")]
    pub use_variance: bool,
    /// Also cluster with identity covariances.
    #[serde(default)]
    pub compare_identity: bool,
    /// Also run k-means directly on the raw estimates.
    #[serde(default)]
    pub compare_naive_kmeans: bool,
    /// Estimate the number of groups.
    #[serde(default)]
    pub select_groups: bool,
    /// Cluster with the true number of groups.
    #[serde(default = "yes")]
    pub cluster_at_truth: bool,
    /// Small-denominator rule of the quantile sandwich covariance.
    #[serde(default)]
    pub density_rule: DensityRule,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            restarts: default_restarts(),
            g_max: default_g_max(),
            use_variance: true,
            compare_identity: false,
            compare_naive_kmeans: false,
            select_groups: false,
            cluster_at_truth: true,
            density_rule: DensityRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: ModelKind,
    pub n: usize,
    #[serde(rename = "T")]
    pub periods: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_errors")]
    pub error_dist: ErrorDist,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: MethodOptions,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid value for `{field}`: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

fn config_error(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        message: message.into(),
    }
}

impl SimulationConfig {
    pub fn new(model: ModelKind, n: usize, periods: usize, reps: usize, seed: u64) -> Self {
        SimulationConfig {
            model,
            n,
            periods,
            tau: default_tau(),
            error_dist: ErrorDist::Normal,
            reps,
            seed,
            method: MethodOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.model.groups();
        if self.reps == 0 {
            return Err(config_error("reps", "at least one repetition is required"));
        }
        if self.n < 3 || self.n < g {
            return Err(config_error(
                "n",
                format!("need at least max(3, {g}) individuals"),
            ));
        }
        if self.model == ModelKind::Model4 && !self.n.is_multiple_of(3) {
            return Err(config_error(
                "n",
                "model4 allocates exactly n/3 individuals per group; n must be divisible by 3",
            ));
        }
        let min_t = if self.model.is_binary() { 4 } else { 10 };
        if self.periods < min_t {
            return Err(config_error(
                "T",
                format!("at least {min_t} periods are required"),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(config_error("tau", "must lie strictly between 0 and 1"));
        }
        if self.method.restarts == 0 {
            return Err(config_error("method.restarts", "must be positive"));
        }
        if self.method.g_max == 0 {
            return Err(config_error("method.g_max", "must be positive"));
        }
        if !self.method.cluster_at_truth && !self.method.select_groups {
            return Err(config_error(
                "method",
                "enable at least one of cluster_at_truth and select_groups",
            ));
        }
        Ok(())
    }

    fn estimator(&self) -> EstimatorKind {
        match self.model {
            ModelKind::Logistic => EstimatorKind::Logistic,
            ModelKind::Model3 => EstimatorKind::QrPooled,
            _ => EstimatorKind::QrSlopes,
        }
    }
}

/// Labels and scores of one clustering method in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub labels: Vec<usize>,
    pub perfect: bool,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub truth: Vec<usize>,
    /// Individuals replaced after an estimation failure.
    pub resampled: usize,
    /// Individuals left out after an estimation failure.
    pub dropped: usize,
    pub spectral: Option<MethodOutcome>,
    pub identity: Option<MethodOutcome>,
    pub naive_kmeans: Option<MethodOutcome>,
    pub g_hat: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub perfect_match: f64,
    pub average_match: f64,
    pub reps_scored: usize,
}

/// Counts of the selected number of groups.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCountFrequency {
    #[serde(rename = "1")]
    pub one: usize,
    #[serde(rename = "2")]
    pub two: usize,
    #[serde(rename = "3")]
    pub three: usize,
    #[serde(rename = "4")]
    pub four: usize,
    #[serde(rename = ">=5")]
    pub five_plus: usize,
}

impl GroupCountFrequency {
    pub fn record(&mut self, g: usize) {
        match g {
            0 | 1 => self.one += 1,
            2 => self.two += 1,
            3 => self.three += 1,
            4 => self.four += 1,
            _ => self.five_plus += 1,
        }
    }

    pub fn count(&self, g: usize) -> usize {
        match g {
            1 => self.one,
            2 => self.two,
            3 => self.three,
            4 => self.four,
            _ => self.five_plus,
        }
    }

    pub fn total(&self) -> usize {
        self.one + self.two + self.three + self.four + self.five_plus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub reps: usize,
    pub failed_reps: usize,
    pub spectral: Option<MethodSummary>,
    pub identity: Option<MethodSummary>,
    pub naive_kmeans: Option<MethodSummary>,
    pub g_hat_frequency: Option<GroupCountFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub summary: SimulationSummary,
    pub records: Vec<RepRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

const CLUSTER_STREAM: u64 = 1;
const NAIVE_STREAM: u64 = 2;

/// Panel, slope estimates, their covariances and the number of replacements.
type LogisticDraw = (
    SimulatedPanel,
    Vec<Vec<f64>>,
    Vec<UncertaintyEstimate>,
    usize,
);

/// Draws a logistic panel, replacing individuals whose fit fails with fresh
/// draws (new group, new data) until every slot is filled.
fn logistic_rep(
    config: &SimulationConfig,
    rng: &mut super::rng::SimRng,
) -> Result<LogisticDraw, String> {
    let n = config.n;
    let cap = 100 * n;
    let groups = draw_groups(config.model, n, rng);
    let mut draws = Vec::with_capacity(n);
    let mut betas = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let mut resampled = 0usize;
    for (i, &g0) in groups.iter().enumerate() {
        let mut g = g0;
        loop {
            attempts += 1;
            if attempts > cap {
                return Err(format!(
                    "exceeded {cap} draws while resampling failed logistic fits"
                ));
            }
            let draw = draw_individual(config.model, g, config.periods, config.error_dist, rng);
            let single = assemble(std::slice::from_ref(&draw), config.periods, true);
            match logistic_slopes(&single.panel, 0) {
                Ok((beta, mut sigma)) => {
                    sigma.individual = i;
                    draws.push(draw);
                    betas.push(beta);
                    sigmas.push(sigma);
                    break;
                }
                Err(
                    EstimationError::DegenerateOutcome
                    | EstimationError::PerfectSeparation
                    | EstimationError::SingularDesign
                    | EstimationError::SingularHessian { .. }
                    | EstimationError::NonConvergence { .. },
                ) => {
                    resampled += 1;
                    g = draw_group(config.model, rng);
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    Ok((
        assemble(&draws, config.periods, true),
        betas,
        sigmas,
        resampled,
    ))
}

fn score(truth: &[usize], labels: Vec<usize>) -> Result<MethodOutcome, String> {
    let m = average_match(truth, &labels).map_err(|e| e.to_string())?;
    Ok(MethodOutcome {
        labels,
        perfect: m.perfect,
        average: m.average,
    })
}

/// One repetition: generate, estimate, cluster and score.
pub fn run_rep(config: &SimulationConfig, rep: usize) -> RepRecord {
    let mut record = RepRecord {
        rep,
        seed: rep_seed(config.seed, rep as u64),
        truth: Vec::new(),
        resampled: 0,
        dropped: 0,
        spectral: None,
        identity: None,
        naive_kmeans: None,
        g_hat: None,
        error: None,
    };
    if let Err(e) = run_rep_inner(config, rep, &mut record) {
        record.error = Some(e);
    }
    record
}

fn run_rep_inner(
    config: &SimulationConfig,
    rep: usize,
    record: &mut RepRecord,
) -> Result<(), String> {
    let mut rng = rep_rng(config.seed, rep as u64);
    let (truth, betas, sigmas) = if config.model == ModelKind::Logistic {
        let (sim, betas, sigmas, resampled) = logistic_rep(config, &mut rng)?;
        record.resampled = resampled;
        (sim.truth, betas, sigmas)
    } else {
        let sim = generate(
            config.model,
            config.n,
            config.periods,
            config.error_dist,
            &mut rng,
        );
        let est = estimate_panel(
            &sim.panel,
            config.estimator(),
            config.tau,
            config.method.density_rule,
        )
        .map_err(|e| e.to_string())?;
        record.dropped = est.dropped.len();
        let truth: Vec<usize> = est.kept.iter().map(|&i| sim.truth[i]).collect();
        (truth, est.betas, est.uncertainties)
    };
    record.truth = truth.clone();
    let n = truth.len();
    let g = config.model.groups();
    if n < g.max(3) {
        return Err(format!("only {n} individuals could be estimated"));
    }

    let weighted = || {
        build_dissimilarity(
            &betas,
            &sigmas,
            &PeriodWeights::Common(config.periods as f64),
        )
    };
    let identity = || identity_dissimilarity(&betas);
    let main = if config.method.use_variance {
        weighted()
    } else {
        identity()
    }
    .map_err(|e| e.to_string())?;
    let kopts = KMeansOptions {
        restarts: config.method.restarts,
        seed: substream_seed(config.seed, rep as u64, CLUSTER_STREAM),
        ..Default::default()
    };

    if config.method.cluster_at_truth {
        let (assignment, _) = spectral_cluster(&main, g, &kopts).map_err(|e| e.to_string())?;
        record.spectral = Some(score(&truth, assignment.labels)?);
        if config.method.compare_identity {
            let v = identity().map_err(|e| e.to_string())?;
            let (assignment, _) = spectral_cluster(&v, g, &kopts).map_err(|e| e.to_string())?;
            record.identity = Some(score(&truth, assignment.labels)?);
        }
        if config.method.compare_naive_kmeans {
            let s = betas[0].len();
            let points = DMatrix::from_fn(n, s, |i, j| betas[i][j]);
            let nopts = KMeansOptions {
                seed: substream_seed(config.seed, rep as u64, NAIVE_STREAM),
                ..kopts
            };
            let km = kmeans(&points, g, &nopts);
            record.naive_kmeans = Some(score(&truth, canonical_labels(&km.labels))?);
        }
    }
    if config.method.select_groups {
        let sel = select_num_groups(&main, config.periods as f64, config.method.g_max)
            .map_err(|e| e.to_string())?;
        record.g_hat = Some(sel.g_hat);
    }
    Ok(())
}

fn summarize<'a>(outcomes: impl Iterator<Item = &'a MethodOutcome>) -> Option<MethodSummary> {
    let (mut perfect, mut average, mut count) = (0usize, 0.0, 0usize);
    for o in outcomes {
        perfect += o.perfect as usize;
        average += o.average;
        count += 1;
    }
    (count > 0).then(|| MethodSummary {
        perfect_match: perfect as f64 / count as f64,
        average_match: average / count as f64,
        reps_scored: count,
    })
}

pub fn summarize_records(records: &[RepRecord]) -> SimulationSummary {
    let g_hat_frequency = records.iter().any(|r| r.g_hat.is_some()).then(|| {
        let mut f = GroupCountFrequency::default();
        records
            .iter()
            .filter_map(|r| r.g_hat)
            .for_each(|g| f.record(g));
        f
    });
    SimulationSummary {
        reps: records.len(),
        failed_reps: records.iter().filter(|r| r.error.is_some()).count(),
        spectral: summarize(records.iter().filter_map(|r| r.spectral.as_ref())),
        identity: summarize(records.iter().filter_map(|r| r.identity.as_ref())),
        naive_kmeans: summarize(records.iter().filter_map(|r| r.naive_kmeans.as_ref())),
        g_hat_frequency,
    }
}

/// Runs every repetition of `config`; repetitions are independent and may
/// execute in parallel without affecting the result.
pub fn run_batch(config: &SimulationConfig) -> Result<SimulationResult, SimulationError> {
    config.validate()?;
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_rep(config, r))
        .collect();
    Ok(SimulationResult {
        config: config.clone(),
        summary: summarize_records(&records),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_fields() {
        let mut c = SimulationConfig::new(ModelKind::Model4, 10, 50, 1, 0);
        assert_eq!(c.validate().unwrap_err().field, "n");
        c.n = 9;
        assert!(c.validate().is_ok());
        c.reps = 0;
        assert_eq!(c.validate().unwrap_err().field, "reps");
        c.reps = 1;
        c.tau = 1.0;
        assert_eq!(c.validate().unwrap_err().field, "tau");
    }

    #[test]
    fn frequency_table() {
        let mut f = GroupCountFrequency::default();
        for g in [1, 2, 3, 3, 4, 7, 10] {
            f.record(g);
        }
        assert_eq!(
            (f.one, f.two, f.three, f.four, f.five_plus),
            (1, 1, 2, 1, 2)
        );
        assert_eq!(f.total(), 7);
    }

    #[test]
    fn small_batch_is_reproducible() {
        let mut c = SimulationConfig::new(ModelKind::Model1, 9, 40, 2, 11);
        c.method.select_groups = true;
        c.method.restarts = 5;
        let a = run_batch(&c).unwrap();
        let b = run_batch(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 2);
        assert!(a.records.iter().all(|r| r.error.is_none()));
    }
}
