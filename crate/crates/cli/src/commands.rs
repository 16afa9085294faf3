use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use spectral_panel::estimators::{
    estimate_panel, CovarianceScale, DensityRule, EstimationError, EstimatorKind,
    UncertaintyEstimate,
};
use spectral_panel::metrics::{average_match, MatchScore};
use spectral_panel::panel::ResponseKind;
use spectral_panel::simulation::batch::{
    run_batch, SimulationConfig, SimulationError, SimulationResult,
};
use spectral_panel::spectral::{
    build_dissimilarity, select_num_groups, spectral_cluster, KMeansOptions, PeriodWeights,
    SpectralError,
};

use crate::io::{self, EstimateTable, FORMAT_VERSION};
use crate::CliError;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn spectral_error(e: SpectralError, ids: &[String]) -> CliError {
    match e {
        SpectralError::TooFewIndividuals { .. }
        | SpectralError::InvalidGroupCount { .. }
        | SpectralError::InvalidPeriods(_)
        | SpectralError::DimensionMismatch(_)
        | SpectralError::ScaleMismatch { .. } => CliError::Validation(e.to_string()),
        SpectralError::NonPositiveCombined { i, j } => CliError::Validation(format!(
            "combined covariance of ids {} and {} is not positive semi-definite",
            ids[i], ids[j]
        )),
        SpectralError::NotSymmetricAt { index } => {
            CliError::Validation(format!("covariance of id {} is not symmetric", ids[index]))
        }
        other => numerical(other),
    }
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub panel: PathBuf,
    pub model: EstimatorKind,
    pub tau: f64,
    pub density_rule: DensityRule,
    pub out: PathBuf,
}

/// Fits every individual of a panel CSV and writes an estimate table.
pub fn run_estimate(args: &EstimateArgs) -> Result<(EstimateTable, String), CliError> {
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Validation(format!(
            "--tau must lie in (0, 1), got {}",
            args.tau
        )));
    }
    let kind = if args.model == EstimatorKind::Logistic {
        ResponseKind::Binary
    } else {
        ResponseKind::Continuous
    };
    let panel = io::read_panel_csv(&args.panel, kind)?;
    let est =
        estimate_panel(&panel, args.model, args.tau, args.density_rule).map_err(|e| match e {
            EstimationError::InvalidInput(m) => CliError::Validation(m),
            other => numerical(other),
        })?;
    let mut table = EstimateTable::new(CovarianceScale::PerObservation);
    table.estimator = Some(args.model.as_str().to_string());
    table.t_periods = Some(panel.periods() as f64);
    table.tau = est.tau;
    table.bandwidth = est.bandwidth;
    table.common_beta = est.common_beta.clone();
    for (k, &i) in est.kept.iter().enumerate() {
        table.ids.push(panel.ids()[i].clone());
        table.betas.push(est.betas[k].clone());
        table.covariances.push(est.uncertainties[k].sigma.clone());
    }
    table.dropped = est
        .dropped
        .iter()
        .map(|d| (panel.ids()[d.index].clone(), d.reason.code().to_string()))
        .collect();
    if table.is_empty() {
        return Err(numerical("no individual could be estimated"));
    }
    io::write_text(&args.out, &table.to_csv())?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "estimated {} of {} individuals ({}, T = {})",
        table.len(),
        panel.n(),
        args.model.as_str(),
        panel.periods()
    );
    for (id, reason) in &table.dropped {
        let _ = writeln!(summary, "dropped {id}: {reason}");
    }
    Ok((table, summary))
}

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub estimates: PathBuf,
    pub groups: Option<usize>,
    pub select_g: bool,
    pub t_periods: Option<f64>,
    pub g_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub spectrum_csv: Option<PathBuf>,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterConfigEcho {
    pub estimates: String,
    pub groups: Option<usize>,
    pub select_g: bool,
    pub t_periods: Option<f64>,
    pub g_max: usize,
    pub seed: u64,
    pub restarts: usize,
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssignmentRow {
    pub id: String,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub g_hat: usize,
    pub g_max: usize,
    pub t_periods: f64,
    pub lambda_tilde: Vec<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub format_version: u32,
    pub library_version: String,
    pub command: String,
    pub config: ClusterConfigEcho,
    pub n: usize,
    pub scale: String,
    pub groups: usize,
    pub kmeans_objective: f64,
    pub assignment: Vec<AssignmentRow>,
    pub selection: Option<SelectionReport>,
    pub metrics: Option<MatchScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

fn uncertainties(table: &EstimateTable) -> Vec<UncertaintyEstimate> {
    table
        .covariances
        .iter()
        .enumerate()
        .map(|(i, c)| UncertaintyEstimate::new(i, c.clone(), table.scale))
        .collect()
}

fn selection_periods(args: &ClusterArgs, table: &EstimateTable) -> Option<f64> {
    args.t_periods.or(table.t_periods).or_else(|| {
        table
            .weights
            .as_ref()
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
    })
}

pub const SINGLE_ROW_MESSAGE: &str = "n ≥ 3 required for selection; n ≥ 1 for clustering at G = 1";

/// Clusters an estimate table at a given or selected number of groups.
pub fn run_cluster(args: &ClusterArgs) -> Result<(ClusterReport, String), CliError> {
    let start = Instant::now();
    if args.groups.is_some() == args.select_g {
        return Err(CliError::Validation(
            "give exactly one of --groups and --select-g".into(),
        ));
    }
    if args.g_max == 0 || args.restarts == 0 {
        return Err(CliError::Validation(
            "--gmax and --restarts must be positive".into(),
        ));
    }
    let table = io::read_estimate_table(&args.estimates)?;
    let n = table.len();
    if args.select_g && n < 3 {
        return Err(CliError::Validation(SINGLE_ROW_MESSAGE.into()));
    }
    if let Some(g) = args.groups {
        if g == 0 || g > n {
            return Err(CliError::Validation(format!(
                "--groups {g} must lie in 1..={n}; {SINGLE_ROW_MESSAGE}"
            )));
        }
    }

    let weights = match (&table.weights, table.scale) {
        (Some(w), CovarianceScale::PerObservation) => PeriodWeights::PerIndividual(w.clone()),
        (_, CovarianceScale::AlreadyScaled) => PeriodWeights::Common(1.0),
        (None, CovarianceScale::PerObservation) => {
            let t = args.t_periods.or(table.t_periods).ok_or_else(|| {
                CliError::Validation(
                    "per_observation covariances need --t-periods, t_periods metadata or a weight column".into(),
                )
            })?;
            PeriodWeights::Common(t)
        }
    };
    let v = build_dissimilarity(&table.betas, &uncertainties(&table), &weights)
        .map_err(|e| spectral_error(e, &table.ids))?;

    let selection = if args.select_g {
        let t = selection_periods(args, &table).ok_or_else(|| {
            CliError::Validation(
                "group-count selection needs --t-periods (or t_periods metadata)".into(),
            )
        })?;
        let sel =
            select_num_groups(&v, t, args.g_max).map_err(|e| spectral_error(e, &table.ids))?;
        Some(SelectionReport {
            g_hat: sel.g_hat,
            g_max: sel.g_max,
            t_periods: t,
            lambda_tilde: sel.lambda_tilde,
            ratios: sel.ratios,
        })
    } else {
        None
    };
    let groups = args
        .groups
        .or(selection.as_ref().map(|s| s.g_hat))
        .unwrap_or(1);
    let kopts = KMeansOptions {
        restarts: args.restarts,
        seed: args.seed,
        ..Default::default()
    };
    let (assignment, _) =
        spectral_cluster(&v, groups, &kopts).map_err(|e| spectral_error(e, &table.ids))?;

    let metrics = match &args.truth {
        Some(path) => Some(score_against_truth(path, &table.ids, &assignment.labels)?),
        None => None,
    };

    if let (Some(path), Some(sel)) = (&args.spectrum_csv, &selection) {
        io::write_text(path, &spectrum_csv(sel))?;
    }

    let report = ClusterReport {
        format_version: FORMAT_VERSION,
        library_version: LIBRARY_VERSION.to_string(),
        command: "cluster".into(),
        config: ClusterConfigEcho {
            estimates: args.estimates.display().to_string(),
            groups: args.groups,
            select_g: args.select_g,
            t_periods: args.t_periods,
            g_max: args.g_max,
            seed: args.seed,
            restarts: args.restarts,
            truth: args.truth.as_ref().map(|p| p.display().to_string()),
        },
        n,
        scale: table.scale.as_str().to_string(),
        groups,
        kmeans_objective: assignment.kmeans_objective,
        assignment: table
            .ids
            .iter()
            .zip(&assignment.labels)
            .map(|(id, &label)| AssignmentRow {
                id: id.clone(),
                label,
            })
            .collect(),
        selection,
        metrics,
        timing_ms: args.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    };
    if let Some(out) = &args.out {
        io::write_text(out, &to_json(&report)?)?;
    }
    Ok((report.clone(), cluster_table(&report)))
}

fn score_against_truth(
    path: &Path,
    ids: &[String],
    labels: &[usize],
) -> Result<MatchScore, CliError> {
    let truth = io::read_truth_csv(path)?;
    let lookup: std::collections::HashMap<&str, usize> =
        truth.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let truth_labels = ids
        .iter()
        .map(|id| {
            lookup.get(id.as_str()).copied().ok_or_else(|| {
                CliError::Validation(format!("id {id} is missing from {}", path.display()))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    average_match(&truth_labels, labels).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn spectrum_csv(sel: &SelectionReport) -> String {
    let mut out = String::from("g,lambda_tilde,ratio\n");
    for (k, l) in sel.lambda_tilde.iter().enumerate() {
        let ratio = sel
            .ratios
            .get(k)
            .map(|r| io::fmt_f64(*r))
            .unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", k + 1, io::fmt_f64(*l), ratio);
    }
    out
}

fn cluster_table(report: &ClusterReport) -> String {
    let mut out = String::new();
    let width = report
        .assignment
        .iter()
        .map(|r| r.id.len())
        .max()
        .unwrap_or(2)
        .max(2);
    if let Some(sel) = &report.selection {
        let _ = writeln!(
            out,
            "selected G = {} (scanned 1..={})",
            sel.g_hat, sel.g_max
        );
    }
    let _ = writeln!(out, "{:<width$}  label", "id");
    for row in &report.assignment {
        let _ = writeln!(out, "{:<width$}  {}", row.id, row.label);
    }
    if let Some(m) = &report.metrics {
        let _ = writeln!(
            out,
            "perfect_match {}  average_match {:.4}",
            m.perfect, m.average
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub format_version: u32,
    pub library_version: String,
    pub command: String,
    #[serde(flatten)]
    pub result: SimulationResult,
}

/// Parses a TOML (or `.json`) simulation config.
pub fn load_simulation_config(path: &Path) -> Result<SimulationConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config: SimulationConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e.message())))?
    };
    config
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(config)
}

pub fn run_simulate(
    config_path: &Path,
    out: Option<&Path>,
) -> Result<(SimulationReport, String), CliError> {
    let config = load_simulation_config(config_path)?;
    let result = run_batch(&config).map_err(|e| match e {
        SimulationError::Config(c) => CliError::Validation(c.to_string()),
    })?;
    let report = SimulationReport {
        format_version: FORMAT_VERSION,
        library_version: LIBRARY_VERSION.to_string(),
        command: "simulate".into(),
        result,
    };
    if let Some(out) = out {
        io::write_text(out, &to_json(&report)?)?;
    }
    let table = simulation_table(&report.result);
    Ok((report, table))
}

pub fn simulation_table(result: &SimulationResult) -> String {
    let c = &result.config;
    let s = &result.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}  n = {}  T = {}  tau = {}  errors = {}  reps = {}  failed = {}",
        c.model.as_str(),
        c.n,
        c.periods,
        c.tau,
        format!("{:?}", c.error_dist).to_lowercase(),
        s.reps,
        s.failed_reps
    );
    let methods = [
        ("spectral", &s.spectral),
        ("identity", &s.identity),
        ("naive_kmeans", &s.naive_kmeans),
    ];
    if methods.iter().any(|(_, m)| m.is_some()) {
        let _ = writeln!(
            out,
            "{:<14}{:>15}{:>15}",
            "method", "perfect_match", "average_match"
        );
        for (name, m) in methods {
            if let Some(m) = m {
                let _ = writeln!(
                    out,
                    "{:<14}{:>15.2}{:>15.3}",
                    name, m.perfect_match, m.average_match
                );
            }
        }
    }
    if let Some(f) = &s.g_hat_frequency {
        let total = f.total().max(1) as f64;
        let _ = writeln!(
            out,
            "{:<14}{:>7}{:>7}{:>7}{:>7}{:>7}",
            "G_hat", "1", "2", "3", "4", ">=5"
        );
        let _ = write!(out, "{:<14}", "share");
        for g in 1..=5 {
            let _ = write!(out, "{:>7.2}", f.count(g) as f64 / total);
        }
        out.push('\n');
    }
    out
}
