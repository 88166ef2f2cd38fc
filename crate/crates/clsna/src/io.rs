//! File ingestion, run configuration, and artifact export for the `clsna`
//! command-line tool.
//!
//! Data lives in plain CSV with one-line headers: an edge list
//! (`time,node_a,node_b`) plus a companion node file, either per-time
//! presence rows (`node,group,time`) or presence intervals
//! (`node,group,first_time,last_time`). Times are contiguous 1..T
//! integers internally; an optional label file maps them to display
//! labels. Floats are exported with 17 significant digits so round-trips
//! are lossless.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read as IoRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ClsnaError, Result};
use crate::model::{
    Group, LatentTrajectory, ModelConfig, NetworkSeries, TimeSlice, VarianceHyperparams,
};
use crate::optimizer::{FitResult, OptimizerConfig};
use crate::simulator::empirical_edge_density;

/// Lossless float formatting (17 significant digits).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// An ingested series plus ingestion warnings.
#[derive(Debug)]
pub struct IngestReport {
    pub series: NetworkSeries,
    /// Duplicate edge rows dropped (same time and unordered node pair).
    pub duplicate_edge_rows: usize,
}

fn parse_group(s: &str, line: u64) -> Result<Group> {
    match s.trim() {
        "1" => Ok(Group::One),
        "2" => Ok(Group::Two),
        other => Err(ClsnaError::input(format!(
            "node file line {line}: group must be 1 or 2, got '{other}'"
        ))),
    }
}

fn parse_time(s: &str, file: &str, line: u64) -> Result<usize> {
    let t: usize = s.trim().parse().map_err(|_| {
        ClsnaError::input(format!("{file} line {line}: invalid time '{}'", s.trim()))
    })?;
    if t == 0 {
        return Err(ClsnaError::input(format!("{file} line {line}: times start at 1")));
    }
    Ok(t)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

struct NodeTable {
    /// Names in declaration order with group labels.
    nodes: Vec<(String, Group)>,
    index: HashMap<String, usize>,
    /// Presence times (1-based) per node, same order as `nodes`.
    presence: Vec<BTreeSet<usize>>,
}

fn read_node_file<R: IoRead>(reader: R) -> Result<NodeTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> =
        rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let interval = match headers.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["node", "group", "time"] => false,
        ["node", "group", "first_time", "last_time"] => true,
        _ => {
            return Err(ClsnaError::input(format!(
                "node file header must be 'node,group,time' or \
                 'node,group,first_time,last_time', got '{}'",
                headers.join(",")
            )))
        }
    };
    let mut table = NodeTable { nodes: Vec::new(), index: HashMap::new(), presence: Vec::new() };
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let name = rec
            .get(0)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ClsnaError::input(format!("node file line {line}: empty node name")))?
            .to_string();
        let group = parse_group(rec.get(1).unwrap_or(""), line)?;
        let id = match table.index.get(&name) {
            Some(&id) => {
                if table.nodes[id].1 != group {
                    return Err(ClsnaError::input(format!(
                        "node file line {line}: node '{name}' re-declared with a different group"
                    )));
                }
                id
            }
            None => {
                let id = table.nodes.len();
                table.index.insert(name.clone(), id);
                table.nodes.push((name, group));
                table.presence.push(BTreeSet::new());
                id
            }
        };
        if interval {
            let first = parse_time(rec.get(2).unwrap_or(""), "node file", line)?;
            let last = parse_time(rec.get(3).unwrap_or(""), "node file", line)?;
            if last < first {
                return Err(ClsnaError::input(format!(
                    "node file line {line}: last_time before first_time"
                )));
            }
            table.presence[id].extend(first..=last);
        } else {
            let t = parse_time(rec.get(2).unwrap_or(""), "node file", line)?;
            table.presence[id].insert(t);
        }
    }
    if table.nodes.is_empty() {
        return Err(ClsnaError::input("node file declares no nodes"));
    }
    Ok(table)
}

/// Reads an edge list and its companion node file into a validated
/// [`NetworkSeries`]. Duplicate edge rows are deduplicated and counted;
/// structural problems are input errors naming the offending line.
pub fn ingest_readers<R1: IoRead, R2: IoRead>(edges: R1, nodes: R2) -> Result<IngestReport> {
    let table = read_node_file(nodes)?;
    let t_max = table
        .presence
        .iter()
        .filter_map(|p| p.last())
        .copied()
        .max()
        .ok_or_else(|| ClsnaError::input("node file declares no presence times"))?;
    let mut covered = vec![false; t_max];
    for p in &table.presence {
        for &t in p {
            covered[t - 1] = true;
        }
    }
    if let Some(gap) = covered.iter().position(|&c| !c) {
        return Err(ClsnaError::input(format!(
            "times are not contiguous: no node is present at time {} (max time {t_max})",
            gap + 1
        )));
    }

    let mut rdr = csv::Reader::from_reader(edges);
    let headers: Vec<String> =
        rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["time", "node_a", "node_b"] {
        return Err(ClsnaError::input(format!(
            "edge file header must be 'time,node_a,node_b', got '{}'",
            headers.join(",")
        )));
    }
    let mut seen: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut duplicate_edge_rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let t = parse_time(rec.get(0).unwrap_or(""), "edge file", line)?;
        if t > t_max {
            return Err(ClsnaError::input(format!(
                "edge file line {line}: time {t} beyond the node file's last time {t_max}"
            )));
        }
        let id_of = |col: usize| -> Result<usize> {
            let name = rec.get(col).map(str::trim).unwrap_or("");
            table.index.get(name).copied().ok_or_else(|| {
                ClsnaError::input(format!(
                    "edge file line {line}: undeclared node '{name}'"
                ))
            })
        };
        let a = id_of(1)?;
        let b = id_of(2)?;
        if a == b {
            return Err(ClsnaError::input(format!(
                "edge file line {line}: self-loop on node '{}'",
                table.nodes[a].0
            )));
        }
        for id in [a, b] {
            if !table.presence[id].contains(&t) {
                return Err(ClsnaError::input(format!(
                    "edge file line {line}: node '{}' is not present at time {t}",
                    table.nodes[id].0
                )));
            }
        }
        if !seen.insert((t, a.min(b), a.max(b))) {
            duplicate_edge_rows += 1;
        }
    }

    let mut times: Vec<TimeSlice> = (1..=t_max)
        .map(|t| TimeSlice {
            present: table
                .nodes
                .iter()
                .enumerate()
                .filter(|(id, _)| table.presence[*id].contains(&t))
                .map(|(_, (name, _))| name.clone())
                .collect(),
            edges: Vec::new(),
        })
        .collect();
    for &(t, a, b) in &seen {
        times[t - 1].edges.push((table.nodes[a].0.clone(), table.nodes[b].0.clone()));
    }
    let series = NetworkSeries::new(table.nodes, times)?;
    Ok(IngestReport { series, duplicate_edge_rows })
}

/// Path-based wrapper around [`ingest_readers`].
pub fn ingest(edge_path: &Path, node_path: &Path) -> Result<IngestReport> {
    let edges = std::fs::File::open(edge_path)
        .map_err(|e| ClsnaError::input(format!("cannot open {}: {e}", edge_path.display())))?;
    let nodes = std::fs::File::open(node_path)
        .map_err(|e| ClsnaError::input(format!("cannot open {}: {e}", node_path.display())))?;
    ingest_readers(edges, nodes)
}

/// Writes a series in the formats [`ingest_readers`] reads: an edge list
/// and a per-time presence node file.
pub fn write_network<W1: Write, W2: Write>(
    series: &NetworkSeries,
    edges: W1,
    nodes: W2,
) -> Result<()> {
    let mut ew = csv::Writer::from_writer(edges);
    ew.write_record(["time", "node_a", "node_b"])?;
    let mut nw = csv::Writer::from_writer(nodes);
    nw.write_record(["node", "group", "time"])?;
    for t0 in 0..series.t_len() {
        let snap = series.snapshot(t0);
        for local in 0..snap.n() {
            let g = series.group_of_local(t0, local);
            nw.write_record([
                series.node_name(snap.global_of_local(local)),
                if g == Group::One { "1" } else { "2" },
                &(t0 + 1).to_string(),
            ])?;
        }
        for &(a, b) in snap.edges() {
            ew.write_record([
                &(t0 + 1).to_string(),
                series.node_name(snap.global_of_local(a)),
                series.node_name(snap.global_of_local(b)),
            ])?;
        }
    }
    ew.flush()?;
    nw.flush()?;
    Ok(())
}

/// Reads a `time,label` CSV mapping each of 1..T to a display label.
pub fn read_time_labels<R: IoRead>(reader: R, t_len: usize) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> =
        rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["time", "label"] {
        return Err(ClsnaError::input("label file header must be 'time,label'"));
    }
    let mut labels = vec![None; t_len];
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let t = parse_time(rec.get(0).unwrap_or(""), "label file", line)?;
        if t > t_len {
            return Err(ClsnaError::input(format!(
                "label file line {line}: time {t} beyond T = {t_len}"
            )));
        }
        labels[t - 1] = Some(rec.get(1).unwrap_or("").trim().to_string());
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| ClsnaError::input(format!("label file misses time {}", i + 1)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Variance-estimation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSettings {
    /// Perturbation size; `null` uses the default rule 0.01 * max(1, |mode|).
    pub eta: Option<f64>,
    /// Parameter names to estimate variances for. Empty = all free params.
    pub targets: Vec<String>,
    /// Pairs whose difference variance is wanted (averaged covariances).
    pub combos: Vec<[String; 2]>,
}

impl Default for VarianceSettings {
    fn default() -> VarianceSettings {
        VarianceSettings { eta: None, targets: Vec::new(), combos: Vec::new() }
    }
}

/// Change-point scan settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Inclusive candidate bounds; `null` scans the full [2, T-1] range.
    pub candidate_min: Option<usize>,
    pub candidate_max: Option<usize>,
    /// Split alpha and delta at the change-point too (default: attractor
    /// coefficients only).
    pub split_baseline: bool,
}

impl Default for SelectionSettings {
    fn default() -> SelectionSettings {
        SelectionSettings { candidate_min: None, candidate_max: None, split_baseline: false }
    }
}

/// One declarative run configuration: model hyperparameters, optimizer,
/// latent dimensions, variance and selection settings, seed. Every field
/// has a default; the hyperparameter defaults are the standard fitting
/// choices (N(0,100) priors on alpha and delta, N(0.5,100) on the
/// within-group attractor coefficients, N(-0.5,100) between, tau^2 = 10,
/// sigma^2 = 1, phi^2 = 10).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hyper: VarianceHyperparams,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    /// Final latent dimension.
    pub p_target: usize,
    /// Over-dimension used by the staged fit before PCA projection.
    pub q_over: usize,
    pub variance: VarianceSettings,
    pub selection: SelectionSettings,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            hyper: VarianceHyperparams::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            p_target: 2,
            q_over: 5,
            variance: VarianceSettings::default(),
            selection: SelectionSettings::default(),
            seed: 0,
        }
    }
}

/// Environment variable prefix for config overrides; the rest of the name
/// is the uppercased path into [`RunConfig`], e.g.
/// `CLSNA_OPTIMIZER_STEP_LATENT` or `CLSNA_HYPER_TAU2`.
pub const ENV_PREFIX: &str = "CLSNA_";

fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn apply_path(value: &mut Value, path: &str, raw: &str) -> bool {
    let Value::Object(map) = value else { return false };
    let keys: Vec<String> = map.keys().cloned().collect();
    for k in keys {
        let upper = k.to_uppercase();
        if path == upper {
            map.insert(k, env_value(raw));
            return true;
        }
        if let Some(rest) = path.strip_prefix(&format!("{upper}_")) {
            if apply_path(map.get_mut(&k).unwrap(), rest, raw) {
                return true;
            }
        }
    }
    false
}

impl RunConfig {
    /// Parses a JSON config file.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the config file (defaults when `None`) and applies `CLSNA_*`
    /// overrides from `vars`. Unknown override names are input errors.
    pub fn load(
        path: Option<&Path>,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<RunConfig> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    ClsnaError::input(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str::<RunConfig>(&text)?
            }
            None => RunConfig::default(),
        };
        let mut value = serde_json::to_value(&base)?;
        for (name, raw) in vars {
            let Some(path) = name.strip_prefix(ENV_PREFIX) else { continue };
            if !apply_path(&mut value, path, &raw) {
                return Err(ClsnaError::input(format!(
                    "unknown configuration override '{name}'"
                )));
            }
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.p_target == 0 {
            return Err(ClsnaError::input("p_target must be at least 1"));
        }
        if self.q_over <= self.p_target {
            return Err(ClsnaError::input("q_over must exceed p_target"));
        }
        if let (Some(lo), Some(hi)) =
            (self.selection.candidate_min, self.selection.candidate_max)
        {
            if lo > hi {
                return Err(ClsnaError::input("candidate_min exceeds candidate_max"));
            }
        }
        Ok(())
    }

    /// Concrete change-point candidate list for a series of length `t_len`.
    pub fn candidates(&self, t_len: usize) -> Result<Vec<usize>> {
        if t_len < 3 {
            return Err(ClsnaError::input("change-point scan needs T >= 3"));
        }
        let lo = self.selection.candidate_min.unwrap_or(2);
        let hi = self.selection.candidate_max.unwrap_or(t_len - 1);
        if lo < 2 || hi > t_len - 1 || lo > hi {
            return Err(ClsnaError::input(format!(
                "candidate range [{lo}, {hi}] outside [2, {}]",
                t_len - 1
            )));
        }
        Ok((lo..=hi).collect())
    }
}

// ---------------------------------------------------------------------------
// Result export
// ---------------------------------------------------------------------------

/// A named point estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub value: f64,
}

/// JSON-facing summary of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub estimates: Vec<NamedEstimate>,
    pub changepoint: Option<usize>,
    pub n_free_params: usize,
    pub final_log_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitSummary {
    pub fn from_fit(fit: &FitResult) -> FitSummary {
        FitSummary {
            estimates: fit
                .layout
                .names()
                .into_iter()
                .zip(&fit.flat)
                .map(|(name, &value)| NamedEstimate { name, value })
                .collect(),
            changepoint: fit.layout.changepoint(),
            n_free_params: fit.layout.n_free(),
            final_log_posterior: fit.final_log_posterior,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

fn coord_header(dim: usize, fixed: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    h.extend((1..=dim).map(|k| format!("x{k}")));
    h
}

fn time_cell(t0: usize, labels: Option<&[String]>) -> String {
    match labels {
        Some(l) => l[t0].clone(),
        None => (t0 + 1).to_string(),
    }
}

/// Per-time per-node latent positions (present nodes only).
pub fn write_positions_csv<W: Write>(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    labels: Option<&[String]>,
    out: W,
) -> Result<()> {
    traj.check_shape(series)?;
    if let Some(l) = labels {
        if l.len() != series.t_len() {
            return Err(ClsnaError::input("label count does not match T"));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coord_header(traj.dim(), &["time", "node", "group"]))?;
    for t0 in 0..series.t_len() {
        let snap = series.snapshot(t0);
        for local in 0..snap.n() {
            let mut rec = vec![
                time_cell(t0, labels),
                series.node_name(snap.global_of_local(local)).to_string(),
                (series.group_of_local(t0, local).index() + 1).to_string(),
            ];
            rec.extend(traj.pos(t0, local).iter().map(|&x| fmt_float(x)));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-time per-group mean latent positions (groups with no present member
/// at a time are skipped).
pub fn write_group_means_csv<W: Write>(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    labels: Option<&[String]>,
    out: W,
) -> Result<()> {
    traj.check_shape(series)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coord_header(traj.dim(), &["time", "group"]))?;
    let p = traj.dim();
    for t0 in 0..series.t_len() {
        let snap = series.snapshot(t0);
        for group in [Group::One, Group::Two] {
            let mut mean = vec![0.0; p];
            let mut count = 0usize;
            for local in 0..snap.n() {
                if series.group_of_local(t0, local) == group {
                    for (m, &x) in mean.iter_mut().zip(traj.pos(t0, local)) {
                        *m += x;
                    }
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let mut rec = vec![time_cell(t0, labels), (group.index() + 1).to_string()];
            rec.extend(mean.iter().map(|&m| fmt_float(m / count as f64)));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-time empirical edge densities; categories with no dyads leave an
/// empty cell.
pub fn write_density_csv<W: Write>(
    series: &NetworkSeries,
    labels: Option<&[String]>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "within_group1", "within_group2", "between", "overall"])?;
    let cell = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for row in empirical_edge_density(series) {
        w.write_record([
            time_cell(row.t - 1, labels),
            cell(row.within_group1),
            cell(row.within_group2),
            cell(row.between),
            cell(row.overall),
        ])?;
    }
    w.flush()?;
    Ok(())
}
