//! Panel, estimate-table and truth-label files.
//!
//! Estimate tables are CSV preceded by `# key=value` metadata lines:
//!
//! ```text
//! # format_version=1
//! # scale=per_observation
//! # t_periods=120
//! id,beta_1,beta_2,c_11,c_12,c_22
//! a,0.1,0.2,1.5,0.1,2.0
//! ```
//!
//! Covariances are stored as the upper triangle in row-major order. A scalar
//! table may carry `se` instead of `c_11`; an optional `weight` column holds
//! individual period counts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spectral_panel::estimators::CovarianceScale;
use spectral_panel::panel::{PanelDataset, ResponseKind};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_error(path: &Path, line: usize, column: &str, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Splits leading `# key=value` lines from the CSV body. Returns the metadata
/// in file order and the number of lines consumed.
fn split_metadata(text: &str) -> (Vec<(String, String)>, usize, &str) {
    let mut meta = Vec::new();
    let mut offset = 0;
    let mut lines = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            offset += line.len();
            lines += 1;
        } else if trimmed.is_empty() && offset == 0 {
            offset += line.len();
            lines += 1;
        } else {
            break;
        }
    }
    (meta, lines, &text[offset..])
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes())
}

fn parse_number(path: &Path, line: usize, column: &str, field: &str) -> Result<f64, CliError> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, column, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, column, "value must be finite"));
    }
    Ok(v)
}

/// Reads a long-format panel with columns `id, t, y, x_1, …, x_p`.
///
/// Individuals keep their order of first appearance and are sorted by `t`
/// internally; every individual must cover the same set of periods.
pub fn read_panel_csv(path: &Path, kind: ResponseKind) -> Result<PanelDataset, CliError> {
    let text = read_text(path)?;
    let (_, skipped, body) = split_metadata(&text);
    let mut rdr = reader(body);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, skipped + 1, "", e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names[0] != "id" || names[1] != "t" || names[2] != "y" {
        return Err(parse_error(
            path,
            skipped + 1,
            "",
            "header must start with id,t,y",
        ));
    }
    for (j, name) in names[3..].iter().enumerate() {
        if *name != format!("x_{}", j + 1) {
            return Err(parse_error(
                path,
                skipped + 1,
                name,
                format!("expected column x_{}", j + 1),
            ));
        }
    }
    let p = names.len() - 3;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, Vec<f64>)>> = HashMap::new();
    for (k, record) in rdr.records().enumerate() {
        let line = skipped + k + 2;
        let record = record.map_err(|e| parse_error(path, line, "", e.to_string()))?;
        if record.len() != names.len() {
            return Err(parse_error(
                path,
                line,
                "",
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, "id", "empty id"));
        }
        let t = parse_number(path, line, "t", &record[1])?;
        let y = parse_number(path, line, "y", &record[2])?;
        if kind == ResponseKind::Binary && y != 0.0 && y != 1.0 {
            return Err(parse_error(
                path,
                line,
                "y",
                format!("binary response expected, found {y}"),
            ));
        }
        let mut x = Vec::with_capacity(p);
        for j in 0..p {
            x.push(parse_number(path, line, names[j + 3], &record[j + 3])?);
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, y, x));
    }
    if order.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: panel has no rows",
            path.display()
        )));
    }
    for obs in rows.values_mut() {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let reference: Vec<f64> = rows[&order[0]].iter().map(|o| o.0).collect();
    if reference.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Validation(format!(
            "id {}: duplicate period",
            order[0]
        )));
    }
    for id in &order {
        let periods: Vec<f64> = rows[id].iter().map(|o| o.0).collect();
        if periods != reference {
            return Err(CliError::Validation(format!(
                "unbalanced panel: id {id} has periods that differ from id {} ({} vs {} observations)",
                order[0],
                periods.len(),
                reference.len()
            )));
        }
    }
    let periods = reference.len();
    let n = order.len();
    let mut x = DMatrix::zeros(n * periods, p);
    let mut y = DVector::zeros(n * periods);
    for (i, id) in order.iter().enumerate() {
        for (s, (_, yv, xv)) in rows[id].iter().enumerate() {
            y[i * periods + s] = *yv;
            for j in 0..p {
                x[(i * periods + s, j)] = xv[j];
            }
        }
    }
    PanelDataset::new(order, periods, x, y, kind).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn panel_to_csv(panel: &PanelDataset) -> String {
    let mut out = String::from("id,t,y");
    for j in 0..panel.p() {
        let _ = write!(out, ",x_{}", j + 1);
    }
    out.push('\n');
    for i in 0..panel.n() {
        for s in 0..panel.periods() {
            let row = i * panel.periods() + s;
            let _ = write!(
                out,
                "{},{},{}",
                panel.ids()[i],
                s + 1,
                fmt_f64(panel.response()[row])
            );
            for j in 0..panel.p() {
                let _ = write!(out, ",{}", fmt_f64(panel.covariates()[(row, j)]));
            }
            out.push('\n');
        }
    }
    out
}

/// Per-individual estimates with covariances, as exchanged between the
/// `estimate` and `cluster` commands.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub ids: Vec<String>,
    pub betas: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub weights: Option<Vec<f64>>,
    pub scale: CovarianceScale,
    pub t_periods: Option<f64>,
    pub tau: Option<f64>,
    pub bandwidth: Option<f64>,
    pub estimator: Option<String>,
    pub common_beta: Option<Vec<f64>>,
    /// `(id, reason)` for individuals that could not be estimated.
    pub dropped: Vec<(String, String)>,
}

impl EstimateTable {
    pub fn new(scale: CovarianceScale) -> Self {
        EstimateTable {
            ids: Vec::new(),
            betas: Vec::new(),
            covariances: Vec::new(),
            weights: None,
            scale,
            t_periods: None,
            tau: None,
            bandwidth: None,
            estimator: None,
            common_beta: None,
            dropped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.betas.first().map_or(0, |b| b.len())
    }

    pub fn to_csv(&self) -> String {
        let p = self.dim();
        let mut out = String::new();
        let _ = writeln!(out, "# format_version={FORMAT_VERSION}");
        let _ = writeln!(out, "# scale={}", self.scale.as_str());
        if let Some(e) = &self.estimator {
            let _ = writeln!(out, "# estimator={e}");
        }
        if let Some(t) = self.t_periods {
            let _ = writeln!(out, "# t_periods={}", fmt_f64(t));
        }
        if let Some(tau) = self.tau {
            let _ = writeln!(out, "# tau={}", fmt_f64(tau));
        }
        if let Some(d) = self.bandwidth {
            let _ = writeln!(out, "# bandwidth={}", fmt_f64(d));
        }
        if let Some(b) = &self.common_beta {
            let joined: Vec<String> = b.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "# common_beta={}", joined.join(" "));
        }
        for (id, reason) in &self.dropped {
            let _ = writeln!(out, "# dropped={id} {reason}");
        }
        let mut header = vec!["id".to_string()];
        header.extend((1..=p).map(|j| format!("beta_{j}")));
        for a in 1..=p {
            for b in a..=p {
                header.push(covariance_name(a, b, p));
            }
        }
        if self.weights.is_some() {
            header.push("weight".into());
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for (k, id) in self.ids.iter().enumerate() {
            let mut fields = vec![id.clone()];
            fields.extend(self.betas[k].iter().map(|v| fmt_f64(*v)));
            let c = &self.covariances[k];
            for a in 0..p {
                for b in a..p {
                    fields.push(fmt_f64(c[(a, b)]));
                }
            }
            if let Some(w) = &self.weights {
                fields.push(fmt_f64(w[k]));
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// `c_ab` for `p < 10`, `c_a_b` otherwise (1-based indices).
fn covariance_name(a: usize, b: usize, p: usize) -> String {
    if p < 10 {
        format!("c_{a}{b}")
    } else {
        format!("c_{a}_{b}")
    }
}

/// Maps a covariance column name to its (row, column) position. Accepts
/// `c_a_b` and, when `p < 10`, the compact `c_ab`.
fn covariance_position(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("c_")?;
    let (a, b) = match rest.split_once('_') {
        Some((a, b)) => (a.parse::<usize>().ok()?, b.parse::<usize>().ok()?),
        None if rest.len() == 2 => (
            rest[..1].parse::<usize>().ok()?,
            rest[1..].parse::<usize>().ok()?,
        ),
        None => return None,
    };
    (a >= 1 && b >= a).then(|| (a - 1, b - 1))
}

fn psd_ok(m: &DMatrix<f64>) -> bool {
    let scale = m.norm();
    let eig = m.clone().symmetric_eigenvalues();
    eig.min() >= -1e-10 * scale
}

pub fn read_estimate_table(path: &Path) -> Result<EstimateTable, CliError> {
    let text = read_text(path)?;
    let (meta, skipped, body) = split_metadata(&text);
    let mut table = EstimateTable::new(CovarianceScale::PerObservation);
    let mut scale_seen = false;
    for (k, (key, value)) in meta.iter().enumerate() {
        let line = k + 1;
        let number = |v: &str| parse_number(path, line, key, v);
        match key.as_str() {
            "format_version" => {
                if value.parse::<u32>().ok() != Some(FORMAT_VERSION) {
                    return Err(parse_error(
                        path,
                        line,
                        key,
                        format!("unsupported format_version {value}"),
                    ));
                }
            }
            "scale" => {
                table.scale = value
                    .parse()
                    .map_err(|e: String| parse_error(path, line, key, e))?;
                scale_seen = true;
            }
            "t_periods" => table.t_periods = Some(number(value)?),
            "tau" => table.tau = Some(number(value)?),
            "bandwidth" => table.bandwidth = Some(number(value)?),
            "estimator" => table.estimator = Some(value.clone()),
            "common_beta" => {
                table.common_beta = Some(
                    value
                        .split_whitespace()
                        .map(number)
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "dropped" => {
                let (id, reason) = value.rsplit_once(' ').unwrap_or((value.as_str(), ""));
                table
                    .dropped
                    .push((id.to_string(), reason.trim().to_string()));
            }
            _ => {}
        }
    }
    if !scale_seen {
        return Err(parse_error(
            path,
            1,
            "scale",
            "missing '# scale=per_observation|already_scaled' metadata",
        ));
    }

    let mut rdr = reader(body);
    let header_line = skipped + 1;
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, header_line, "", e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("id") {
        return Err(parse_error(
            path,
            header_line,
            "",
            "first column must be id",
        ));
    }
    let mut beta_cols = Vec::new();
    let mut cov_cols = Vec::new();
    let mut se_col = None;
    let mut weight_col = None;
    for (c, name) in names.iter().enumerate().skip(1) {
        if let Some(j) = name
            .strip_prefix("beta_")
            .and_then(|s| s.parse::<usize>().ok())
        {
            beta_cols.push((j, c));
        } else if let Some(pos) = covariance_position(name) {
            cov_cols.push((pos, c));
        } else if name == "se" {
            se_col = Some(c);
        } else if name == "weight" {
            weight_col = Some(c);
        } else {
            return Err(parse_error(path, header_line, name, "unknown column"));
        }
    }
    let p = beta_cols.len();
    beta_cols.sort();
    if p == 0 || beta_cols.iter().enumerate().any(|(k, (j, _))| *j != k + 1) {
        return Err(parse_error(
            path,
            header_line,
            "beta_1",
            "expected columns beta_1..beta_p",
        ));
    }
    let needed = p * (p + 1) / 2;
    let use_se = se_col.is_some() && cov_cols.is_empty();
    if use_se && p != 1 {
        return Err(parse_error(
            path,
            header_line,
            "se",
            "se is only accepted for scalar estimates",
        ));
    }
    if !use_se {
        if cov_cols.len() != needed || cov_cols.iter().any(|((a, b), _)| *a >= p || *b >= p) {
            return Err(parse_error(
                path,
                header_line,
                "c_11",
                format!("expected {needed} upper-triangle covariance columns for p = {p}"),
            ));
        }
        if se_col.is_some() {
            return Err(parse_error(
                path,
                header_line,
                "se",
                "give either se or covariance columns",
            ));
        }
    }
    let mut weights = weight_col.map(|_| Vec::new());

    for (k, record) in rdr.records().enumerate() {
        let line = header_line + k + 1;
        let record = record.map_err(|e| parse_error(path, line, "", e.to_string()))?;
        if record.len() != names.len() {
            return Err(parse_error(
                path,
                line,
                "",
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if table.ids.contains(&id) {
            return Err(parse_error(path, line, "id", format!("duplicate id {id}")));
        }
        let beta = beta_cols
            .iter()
            .map(|(_, c)| parse_number(path, line, &names[*c], &record[*c]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cov = DMatrix::zeros(p, p);
        if use_se {
            let c = se_col.unwrap_or(0);
            let se = parse_number(path, line, "se", &record[c])?;
            if se < 0.0 {
                return Err(parse_error(
                    path,
                    line,
                    "se",
                    "standard error must be non-negative",
                ));
            }
            cov[(0, 0)] = se * se;
        } else {
            for ((a, b), c) in &cov_cols {
                let v = parse_number(path, line, &names[*c], &record[*c])?;
                cov[(*a, *b)] = v;
                cov[(*b, *a)] = v;
            }
        }
        if !psd_ok(&cov) {
            return Err(CliError::Validation(format!(
                "{}: line {line}: covariance of id {id} is not positive semi-definite",
                path.display()
            )));
        }
        if let (Some(w), Some(c)) = (weights.as_mut(), weight_col) {
            let v = parse_number(path, line, "weight", &record[c])?;
            if v <= 0.0 {
                return Err(parse_error(path, line, "weight", "weight must be positive"));
            }
            w.push(v);
        }
        table.ids.push(id);
        table.betas.push(beta);
        table.covariances.push(cov);
    }
    table.weights = weights;
    if table.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: no estimate rows",
            path.display()
        )));
    }
    Ok(table)
}

/// Reads `id,label` rows of true group labels (positive integers).
pub fn read_truth_csv(path: &Path) -> Result<Vec<(String, usize)>, CliError> {
    let text = read_text(path)?;
    let (_, skipped, body) = split_metadata(&text);
    let mut rdr = reader(body);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(path, skipped + 1, "", e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(parse_error(
            path,
            skipped + 1,
            "",
            "header must be id,label",
        ));
    }
    let mut out = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = skipped + k + 2;
        let record = record.map_err(|e| parse_error(path, line, "", e.to_string()))?;
        let label: usize = record[1].parse().ok().filter(|&l| l >= 1).ok_or_else(|| {
            parse_error(
                path,
                line,
                "label",
                format!("'{}' is not a positive integer", &record[1]),
            )
        })?;
        out.push((record[0].to_string(), label));
    }
    Ok(out)
}

pub fn truth_to_csv(ids: &[String], labels: &[usize]) -> String {
    let mut out = String::from("id,label\n");
    for (id, l) in ids.iter().zip(labels) {
        let _ = writeln!(out, "{id},{l}");
    }
    out
}
