//! Domain types and local model quantities: network series with node churn,
//! latent trajectories, global parameters, attractors and edge logits.
//!
//! Conventions: time steps are 1-based in user-facing data (`1..=T`) and
//! 0-based internally. Node identifiers are opaque strings mapped to dense
//! global indices; each time step additionally carries a dense local
//! indexing of the nodes present at that step.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{ClsnaError, Result};

/// Node group label. The model is restricted to two groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    One,
    Two,
}

impl Group {
    pub fn index(self) -> usize {
        match self {
            Group::One => 0,
            Group::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Group> {
        match i {
            0 => Ok(Group::One),
            1 => Ok(Group::Two),
            _ => Err(ClsnaError::input(format!("group index {i} out of range"))),
        }
    }

    /// User-facing label: 1 or 2.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_label(l: u8) -> Result<Group> {
        match l {
            1 => Ok(Group::One),
            2 => Ok(Group::Two),
            _ => Err(ClsnaError::input(format!("group label {l} must be 1 or 2"))),
        }
    }
}

/// One time step of the observed network, with dense local indexing of the
/// nodes present at that step.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Global node ids present, sorted ascending. Local index = position.
    present: Vec<usize>,
    local_of_global: HashMap<usize, usize>,
    /// Dense symmetric adjacency over local indices, zero diagonal.
    adj: Vec<bool>,
    /// Unordered edges as local pairs (a < b).
    edges: Vec<(usize, usize)>,
    /// Per local node: same-group and other-group neighbor lists (local).
    neighbors_same: Vec<Vec<usize>>,
    neighbors_other: Vec<Vec<usize>>,
}

impl Snapshot {
    pub fn n(&self) -> usize {
        self.present.len()
    }

    pub fn present(&self) -> &[usize] {
        &self.present
    }

    pub fn global_of_local(&self, local: usize) -> usize {
        self.present[local]
    }

    pub fn local_of_global(&self, global: usize) -> Option<usize> {
        self.local_of_global.get(&global).copied()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.n() + b]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors_same(&self, local: usize) -> &[usize] {
        &self.neighbors_same[local]
    }

    pub fn neighbors_other(&self, local: usize) -> &[usize] {
        &self.neighbors_other[local]
    }

    /// Number of unordered present dyads at this step.
    pub fn dyad_count(&self) -> usize {
        self.n() * (self.n().saturating_sub(1)) / 2
    }
}

/// Input form of one time step: node names present and undirected edges.
#[derive(Debug, Clone, Default)]
pub struct TimeSlice {
    pub present: Vec<String>,
    pub edges: Vec<(String, String)>,
}

/// Time-indexed binary adjacency snapshots with per-time presence sets and
/// static two-group labels.
#[derive(Debug, Clone)]
pub struct NetworkSeries {
    names: Vec<String>,
    name_index: HashMap<String, usize>,
    labels: Vec<Group>,
    snaps: Vec<Snapshot>,
}

impl NetworkSeries {
    /// Build and validate a series from named nodes and per-time slices.
    ///
    /// Rejects self-loops, edges incident to absent nodes, and present nodes
    /// without a label. Duplicate edges are collapsed.
    pub fn new(nodes: Vec<(String, Group)>, times: Vec<TimeSlice>) -> Result<NetworkSeries> {
        if times.is_empty() {
            return Err(ClsnaError::input("network series must have at least one time step"));
        }
        let mut names = Vec::with_capacity(nodes.len());
        let mut labels = Vec::with_capacity(nodes.len());
        let mut name_index = HashMap::new();
        for (name, group) in nodes {
            if name_index.contains_key(&name) {
                return Err(ClsnaError::input(format!("duplicate node declaration '{name}'")));
            }
            name_index.insert(name.clone(), names.len());
            names.push(name);
            labels.push(group);
        }

        let mut snaps = Vec::with_capacity(times.len());
        for (t0, slice) in times.into_iter().enumerate() {
            let t = t0 + 1;
            let mut present: Vec<usize> = Vec::with_capacity(slice.present.len());
            for name in &slice.present {
                let g = *name_index
                    .get(name)
                    .ok_or_else(|| ClsnaError::input(format!("undeclared node '{name}' present at time {t}")))?;
                present.push(g);
            }
            present.sort_unstable();
            present.dedup();
            if present.is_empty() {
                return Err(ClsnaError::input(format!("time {t} has an empty presence set")));
            }
            let local_of_global: HashMap<usize, usize> =
                present.iter().enumerate().map(|(l, &g)| (g, l)).collect();
            let n = present.len();
            let mut adj = vec![false; n * n];
            for (a_name, b_name) in &slice.edges {
                let ga = *name_index
                    .get(a_name)
                    .ok_or_else(|| ClsnaError::input(format!("edge references undeclared node '{a_name}' at time {t}")))?;
                let gb = *name_index
                    .get(b_name)
                    .ok_or_else(|| ClsnaError::input(format!("edge references undeclared node '{b_name}' at time {t}")))?;
                if ga == gb {
                    return Err(ClsnaError::input(format!("self-loop on node '{a_name}' at time {t}")));
                }
                let la = *local_of_global.get(&ga).ok_or_else(|| {
                    ClsnaError::input(format!("edge endpoint '{a_name}' not present at time {t}"))
                })?;
                let lb = *local_of_global.get(&gb).ok_or_else(|| {
                    ClsnaError::input(format!("edge endpoint '{b_name}' not present at time {t}"))
                })?;
                adj[la * n + lb] = true;
                adj[lb * n + la] = true;
            }
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if adj[a * n + b] {
                        edges.push((a, b));
                    }
                }
            }
            let mut neighbors_same = vec![Vec::new(); n];
            let mut neighbors_other = vec![Vec::new(); n];
            for &(a, b) in &edges {
                let same = labels[present[a]] == labels[present[b]];
                if same {
                    neighbors_same[a].push(b);
                    neighbors_same[b].push(a);
                } else {
                    neighbors_other[a].push(b);
                    neighbors_other[b].push(a);
                }
            }
            snaps.push(Snapshot {
                present,
                local_of_global,
                adj,
                edges,
                neighbors_same,
                neighbors_other,
            });
        }

        Ok(NetworkSeries { names, name_index, labels, snaps })
    }

    /// Number of time steps T.
    pub fn t_len(&self) -> usize {
        self.snaps.len()
    }

    pub fn snapshot(&self, t0: usize) -> &Snapshot {
        &self.snaps[t0]
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_name(&self, global: usize) -> &str {
        &self.names[global]
    }

    pub fn node_id(&self, name: &str) -> Result<usize> {
        self.name_index
            .get(name)
            .copied()
            .ok_or_else(|| ClsnaError::input(format!("unknown node identifier '{name}'")))
    }

    pub fn group_of(&self, global: usize) -> Group {
        self.labels[global]
    }

    pub fn group_of_local(&self, t0: usize, local: usize) -> Group {
        self.labels[self.snaps[t0].present[local]]
    }

    /// Local index at time `t0 - 1` of the node with local index `local` at
    /// `t0`, if it was present then.
    pub fn prev_local(&self, t0: usize, local: usize) -> Option<usize> {
        if t0 == 0 {
            return None;
        }
        self.snaps[t0 - 1].local_of_global(self.snaps[t0].present[local])
    }

    /// Total number of observed dyad-time pairs (the BIC sample size).
    pub fn total_dyads(&self) -> usize {
        self.snaps.iter().map(Snapshot::dyad_count).sum()
    }

    /// Same-group and other-group neighbor names of `node` at time `t0`.
    pub fn neighbor_sets(&self, t0: usize, node: &str) -> Result<(Vec<String>, Vec<String>)> {
        let global = self.node_id(node)?;
        let snap = self.snapshot(t0);
        let local = snap
            .local_of_global(global)
            .ok_or_else(|| ClsnaError::input(format!("node '{node}' not present at time {}", t0 + 1)))?;
        let to_names = |locals: &[usize]| {
            let mut v: Vec<String> = locals
                .iter()
                .map(|&l| self.names[snap.present[l]].clone())
                .collect();
            v.sort();
            v
        };
        Ok((to_names(snap.neighbors_same(local)), to_names(snap.neighbors_other(local))))
    }
}

/// Per-time, per-present-node latent position vectors in `dim` dimensions.
///
/// Positions exist exactly for (t, i) pairs with i present at t; coordinates
/// at time t are stored flat in the snapshot's local node order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    dim: usize,
    coords: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn zeros(series: &NetworkSeries, dim: usize) -> LatentTrajectory {
        let coords = (0..series.t_len())
            .map(|t| vec![0.0; series.snapshot(t).n() * dim])
            .collect();
        LatentTrajectory { dim, coords }
    }

    pub fn from_coords(dim: usize, coords: Vec<Vec<f64>>) -> LatentTrajectory {
        LatentTrajectory { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_len(&self) -> usize {
        self.coords.len()
    }

    pub fn pos(&self, t0: usize, local: usize) -> &[f64] {
        &self.coords[t0][local * self.dim..(local + 1) * self.dim]
    }

    pub fn pos_mut(&mut self, t0: usize, local: usize) -> &mut [f64] {
        &mut self.coords[t0][local * self.dim..(local + 1) * self.dim]
    }

    pub fn slice(&self, t0: usize) -> &[f64] {
        &self.coords[t0]
    }

    pub fn slice_mut(&mut self, t0: usize) -> &mut [f64] {
        &mut self.coords[t0]
    }

    /// Total number of scalar coordinates across all times and nodes.
    pub fn coord_count(&self) -> usize {
        self.coords.iter().map(Vec::len).sum()
    }

    /// Checks shape agreement with a series.
    pub fn check_shape(&self, series: &NetworkSeries) -> Result<()> {
        if self.coords.len() != series.t_len() {
            return Err(ClsnaError::input(format!(
                "latent trajectory has {} time steps, series has {}",
                self.coords.len(),
                series.t_len()
            )));
        }
        for t0 in 0..self.coords.len() {
            let want = series.snapshot(t0).n() * self.dim;
            if self.coords[t0].len() != want {
                return Err(ClsnaError::input(format!(
                    "latent slice at time {} has {} coordinates, expected {}",
                    t0 + 1,
                    self.coords[t0].len(),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn iter_coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.coords.iter().flat_map(|v| v.iter().copied())
    }

    pub fn apply<F: FnMut(&mut f64)>(&mut self, mut f: F) {
        for v in &mut self.coords {
            for x in v.iter_mut() {
                f(x);
            }
        }
    }
}

/// The five scalar model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    /// Baseline edge propensity on the logit scale.
    pub alpha: f64,
    /// Edge-persistence coefficient.
    pub delta: f64,
    /// Within-group attractor coefficients, one per group.
    pub gamma_w: [f64; 2],
    /// Between-group attractor coefficient.
    pub gamma_b: f64,
}

impl GlobalParams {
    pub fn new(alpha: f64, delta: f64, gamma_w1: f64, gamma_w2: f64, gamma_b: f64) -> GlobalParams {
        GlobalParams { alpha, delta, gamma_w: [gamma_w1, gamma_w2], gamma_b }
    }

    /// Order convention used throughout: [alpha, delta, gamma_w1, gamma_w2, gamma_b].
    pub fn as_array(&self) -> [f64; 5] {
        [self.alpha, self.delta, self.gamma_w[0], self.gamma_w[1], self.gamma_b]
    }

    pub fn from_array(a: [f64; 5]) -> GlobalParams {
        GlobalParams { alpha: a[0], delta: a[1], gamma_w: [a[2], a[3]], gamma_b: a[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

/// Fixed variance hyperparameters and Gaussian priors on the global
/// parameters. Prior arrays follow the [alpha, delta, gamma_w1, gamma_w2,
/// gamma_b] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceHyperparams {
    /// Initial-time latent prior variance.
    pub tau2: f64,
    /// Entering-node latent prior variance.
    pub phi2: f64,
    /// Retained-node transition variance.
    pub sigma2: f64,
    pub prior_mean: [f64; 5],
    pub prior_var: [f64; 5],
}

impl Default for VarianceHyperparams {
    fn default() -> VarianceHyperparams {
        VarianceHyperparams {
            tau2: 10.0,
            phi2: 10.0,
            sigma2: 1.0,
            prior_mean: [0.0, 0.0, 0.5, 0.5, -0.5],
            prior_var: [100.0; 5],
        }
    }
}

impl VarianceHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 > 0.0 && self.phi2 > 0.0 && self.sigma2 > 0.0) {
            return Err(ClsnaError::input("tau2, phi2, sigma2 must be strictly positive"));
        }
        if self.prior_var.iter().any(|&v| !(v > 0.0)) {
            return Err(ClsnaError::input("all prior variances must be strictly positive"));
        }
        Ok(())
    }
}

/// Which dyads receive the delta (edge persistence) term at time t >= 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DeltaRule {
    /// delta * Y_{t-1,ij} applies iff both endpoints are present at t-1, so
    /// the previous edge indicator is well defined. Recovers the original
    /// fixed-node-set model when presence is constant.
    #[default]
    BothPresentPrev,
    /// Literal per-node branching: the delta term is attached only to dyads
    /// with an endpoint absent at t-1, whose previous edge indicator is then
    /// necessarily zero. Kept selectable for comparison; makes delta inert.
    LiteralAbsent,
}

/// Model evaluation options shared by the posterior, gradients and simulator.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ModelConfig {
    pub delta_rule: DeltaRule,
}

/// Within- and between-group attractor vectors for one node. A component is
/// the exact zero vector when the corresponding neighbor set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorPair {
    pub within: Vec<f64>,
    pub between: Vec<f64>,
}

/// Writes the mean position of `locals` minus `z_i` into `out`; leaves `out`
/// all-zero when `locals` is empty.
fn mean_discrepancy_into(z: &[f64], p: usize, z_i: &[f64], locals: &[usize], out: &mut [f64]) {
    out.fill(0.0);
    if locals.is_empty() {
        return;
    }
    for &l in locals {
        let zj = &z[l * p..(l + 1) * p];
        for k in 0..p {
            out[k] += zj[k];
        }
    }
    let inv = 1.0 / locals.len() as f64;
    for k in 0..p {
        out[k] = out[k] * inv - z_i[k];
    }
}

/// Attractor pair of the node with local index `local` at time `t0`,
/// computed from the positions and adjacency of that same time step.
pub(crate) fn attractors_into(
    series: &NetworkSeries,
    z_t: &[f64],
    p: usize,
    t0: usize,
    local: usize,
    within: &mut [f64],
    between: &mut [f64],
) {
    let snap = series.snapshot(t0);
    let z_i = &z_t[local * p..(local + 1) * p];
    mean_discrepancy_into(z_t, p, z_i, snap.neighbors_same(local), within);
    mean_discrepancy_into(z_t, p, z_i, snap.neighbors_other(local), between);
}

/// Attractor pair for `node` at time `t0` (used as the t-1 step of a
/// transition).
pub fn attractors(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    t0: usize,
    node: &str,
) -> Result<AttractorPair> {
    let global = series.node_id(node)?;
    let snap = series.snapshot(t0);
    let local = snap
        .local_of_global(global)
        .ok_or_else(|| ClsnaError::input(format!("node '{node}' not present at time {}", t0 + 1)))?;
    let p = traj.dim();
    let mut within = vec![0.0; p];
    let mut between = vec![0.0; p];
    attractors_into(series, traj.slice(t0), p, t0, local, &mut within, &mut between);
    Ok(AttractorPair { within, between })
}

/// Transition mean for a node retained from `t0` to `t0 + 1`:
/// z_{t-1,i} + gamma_w^{group(i)} * within + gamma_b * between.
pub(crate) fn transition_mean_into(
    series: &NetworkSeries,
    z_prev: &[f64],
    p: usize,
    t0_prev: usize,
    local_prev: usize,
    params: &GlobalParams,
    scratch_w: &mut [f64],
    scratch_b: &mut [f64],
    out: &mut [f64],
) {
    attractors_into(series, z_prev, p, t0_prev, local_prev, scratch_w, scratch_b);
    let g = series.group_of_local(t0_prev, local_prev).index();
    let z_i = &z_prev[local_prev * p..(local_prev + 1) * p];
    for k in 0..p {
        out[k] = z_i[k] + params.gamma_w[g] * scratch_w[k] + params.gamma_b * scratch_b[k];
    }
}

/// Transition mean for `node`, present at both `t0` and `t0 + 1`.
pub fn transition_mean(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    t0: usize,
    params: &GlobalParams,
    node: &str,
) -> Result<Vec<f64>> {
    let global = series.node_id(node)?;
    let snap = series.snapshot(t0);
    let local = snap
        .local_of_global(global)
        .ok_or_else(|| ClsnaError::input(format!("node '{node}' not present at time {}", t0 + 1)))?;
    let p = traj.dim();
    let mut w = vec![0.0; p];
    let mut b = vec![0.0; p];
    let mut out = vec![0.0; p];
    transition_mean_into(series, traj.slice(t0), p, t0, local, params, &mut w, &mut b, &mut out);
    Ok(out)
}

/// Mean position of all group members present at `t0_prev`; the zero vector
/// when the group has no members then. Writes into `out` and returns the
/// member count.
pub(crate) fn group_mean_into(
    series: &NetworkSeries,
    z_prev: &[f64],
    p: usize,
    t0_prev: usize,
    group: Group,
    out: &mut [f64],
) -> usize {
    out.fill(0.0);
    let snap = series.snapshot(t0_prev);
    let mut count = 0usize;
    for local in 0..snap.n() {
        if series.group_of_local(t0_prev, local) == group {
            let zj = &z_prev[local * p..(local + 1) * p];
            for k in 0..p {
                out[k] += zj[k];
            }
            count += 1;
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        for k in 0..p {
            out[k] *= inv;
        }
    }
    count
}

/// Prior mean for a node entering at `t0_prev + 1`: the average position of
/// its whole group at `t0_prev`, or the zero vector if the group was absent.
pub fn entering_node_mean(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    t0_prev: usize,
    node: &str,
) -> Result<Vec<f64>> {
    let global = series.node_id(node)?;
    let p = traj.dim();
    let mut out = vec![0.0; p];
    group_mean_into(series, traj.slice(t0_prev), p, t0_prev, series.group_of(global), &mut out);
    Ok(out)
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Edge logit: alpha + delta * prev_edge - ||z_i - z_j||. `prev_edge` is
/// `None` when the persistence term does not apply to this dyad.
pub fn edge_logit(
    params: &GlobalParams,
    z_i: &[f64],
    z_j: &[f64],
    prev_edge: Option<f64>,
) -> Result<f64> {
    if z_i.len() != z_j.len() {
        return Err(ClsnaError::input(format!(
            "position dimension mismatch: {} vs {}",
            z_i.len(),
            z_j.len()
        )));
    }
    let mut logit = params.alpha - euclidean_distance(z_i, z_j);
    if let Some(y_prev) = prev_edge {
        logit += params.delta * y_prev;
    }
    Ok(logit)
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable Bernoulli log-likelihood at the given logit.
pub fn bernoulli_loglik(y: bool, logit: f64) -> f64 {
    -softplus(if y { -logit } else { logit })
}
