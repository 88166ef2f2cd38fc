//! Closed-form gradients of the log posterior with respect to all latent
//! positions and all free global parameters.
//!
//! A position z_{t-1,i} enters the posterior through its own latent factor,
//! the edge factors at t-1, the transition means of every retained node it
//! neighbors at t-1 (including itself), and the entering-node group means at
//! t. All of those paths are accumulated here.

use rand::Rng;

use crate::error::{ClsnaError, Result};
use crate::model::{
    attractors_into, euclidean_distance, group_mean_into, sigmoid, LatentTrajectory, ModelConfig,
    NetworkSeries, VarianceHyperparams,
};
use crate::params::{ParamLayout, ParamRole};
use crate::posterior::{latent_kind, prev_edge_indicator, LatentKind};

/// Gradient of the log posterior; shapes mirror the latent trajectory and
/// the flat parameter vector exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub d_latent: Vec<Vec<f64>>,
    pub d_params: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(series: &NetworkSeries, dim: usize, n_params: usize) -> GradientBundle {
        GradientBundle {
            d_latent: (0..series.t_len())
                .map(|t| vec![0.0; series.snapshot(t).n() * dim])
                .collect(),
            d_params: vec![0.0; n_params],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_params.iter().all(|x| x.is_finite())
            && self.d_latent.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn inf_norm(&self) -> f64 {
        let a = self.d_params.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.d_latent
            .iter()
            .flat_map(|v| v.iter())
            .fold(a, |m, x| m.max(x.abs()))
    }

    pub fn add(&mut self, other: &GradientBundle) {
        for (a, b) in self.d_params.iter_mut().zip(&other.d_params) {
            *a += b;
        }
        for (va, vb) in self.d_latent.iter_mut().zip(&other.d_latent) {
            for (a, b) in va.iter_mut().zip(vb) {
                *a += b;
            }
        }
    }
}

/// An explicit subset of posterior factors: latent factors as (t, local),
/// edge factors as (t, a, b) with a < b, plus whether the prior factors are
/// included. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct TermSample {
    pub latent: Vec<(u32, u32)>,
    pub edges: Vec<(u32, u32, u32)>,
    pub priors: bool,
}

impl TermSample {
    /// Every factor of the posterior.
    pub fn full(series: &NetworkSeries) -> TermSample {
        let mut latent = Vec::new();
        let mut edges = Vec::new();
        for t0 in 0..series.t_len() {
            let n = series.snapshot(t0).n();
            for i in 0..n {
                latent.push((t0 as u32, i as u32));
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    edges.push((t0 as u32, a as u32, b as u32));
                }
            }
        }
        TermSample { latent, edges, priors: true }
    }

    pub fn validate(&self, series: &NetworkSeries) -> Result<()> {
        for &(t, i) in &self.latent {
            if t as usize >= series.t_len() || i as usize >= series.snapshot(t as usize).n() {
                return Err(ClsnaError::input(format!("invalid latent term index ({t}, {i})")));
            }
        }
        for &(t, a, b) in &self.edges {
            if t as usize >= series.t_len()
                || b as usize >= series.snapshot(t as usize).n()
                || a >= b
            {
                return Err(ClsnaError::input(format!("invalid edge term index ({t}, {a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Counts of samplable factors per category.
pub fn term_counts(series: &NetworkSeries) -> (usize, usize) {
    let latent: usize = (0..series.t_len()).map(|t| series.snapshot(t).n()).sum();
    (latent, series.total_dyads())
}

/// Decodes a dyad index d in 0..n(n-1)/2 to the pair (a, b), a < b, in the
/// row-major unordered-pair enumeration.
pub(crate) fn decode_dyad(n: usize, d: usize) -> (usize, usize) {
    debug_assert!(d < n * (n - 1) / 2);
    let offset = |a: usize| a * (2 * n - a - 1) / 2;
    let fa = (2 * n - 1) as f64;
    let mut a = ((fa - (fa * fa - 8.0 * d as f64).sqrt()) / 2.0).floor() as usize;
    while offset(a + 1) <= d {
        a += 1;
    }
    while offset(a) > d {
        a -= 1;
    }
    (a, a + 1 + d - offset(a))
}

/// Uniformly samples `ceil(fraction * total)` factors without replacement
/// from each of the latent and edge categories. Priors are always included.
pub fn sample_terms<R: Rng>(series: &NetworkSeries, fraction: f64, rng: &mut R) -> TermSample {
    let (latent_total, edge_total) = term_counts(series);
    let mut latent_prefix = Vec::with_capacity(series.t_len() + 1);
    let mut edge_prefix = Vec::with_capacity(series.t_len() + 1);
    latent_prefix.push(0usize);
    edge_prefix.push(0usize);
    for t0 in 0..series.t_len() {
        let snap = series.snapshot(t0);
        latent_prefix.push(latent_prefix[t0] + snap.n());
        edge_prefix.push(edge_prefix[t0] + snap.dyad_count());
    }
    let decode_time = |prefix: &[usize], k: usize| -> usize {
        // Last t with prefix[t] <= k.
        match prefix.binary_search(&k) {
            Ok(t) => t,
            Err(t) => t - 1,
        }
    };

    let k_latent = ((fraction * latent_total as f64).ceil() as usize).min(latent_total);
    let k_edge = ((fraction * edge_total as f64).ceil() as usize).min(edge_total);
    let mut latent = Vec::with_capacity(k_latent);
    for k in rand::seq::index::sample(rng, latent_total, k_latent) {
        let t0 = decode_time(&latent_prefix, k);
        latent.push((t0 as u32, (k - latent_prefix[t0]) as u32));
    }
    let mut edges = Vec::with_capacity(k_edge);
    for k in rand::seq::index::sample(rng, edge_total, k_edge) {
        let t0 = decode_time(&edge_prefix, k);
        let (a, b) = decode_dyad(series.snapshot(t0).n(), k - edge_prefix[t0]);
        edges.push((t0 as u32, a as u32, b as u32));
    }
    TermSample { latent, edges, priors: true }
}

struct Workspace {
    w: Vec<f64>,
    b: Vec<f64>,
    mu: Vec<f64>,
    r: Vec<f64>,
}

impl Workspace {
    fn new(p: usize) -> Workspace {
        Workspace { w: vec![0.0; p], b: vec![0.0; p], mu: vec![0.0; p], r: vec![0.0; p] }
    }
}

#[allow(clippy::too_many_arguments)]
fn accum_latent(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    t0: usize,
    local: usize,
    weight: f64,
    ws: &mut Workspace,
    out: &mut GradientBundle,
) {
    let p = traj.dim();
    let z = traj.pos(t0, local);
    match latent_kind(series, t0, local) {
        LatentKind::Initial => {
            let d = &mut out.d_latent[t0][local * p..(local + 1) * p];
            for k in 0..p {
                d[k] -= weight * z[k] / hyper.tau2;
            }
        }
        LatentKind::Retained => {
            let prev = series.prev_local(t0, local).expect("retained node");
            let params = layout.params_at(flat, t0);
            let seg = layout.segment_of(t0);
            attractors_into(series, traj.slice(t0 - 1), p, t0 - 1, prev, &mut ws.w, &mut ws.b);
            let group = series.group_of_local(t0 - 1, prev).index();
            let gw = params.gamma_w[group];
            let gb = params.gamma_b;
            let z_prev_i = traj.pos(t0 - 1, prev);
            for k in 0..p {
                ws.mu[k] = z_prev_i[k] + gw * ws.w[k] + gb * ws.b[k];
                ws.r[k] = (z[k] - ws.mu[k]) / hyper.sigma2;
            }
            {
                let d = &mut out.d_latent[t0][local * p..(local + 1) * p];
                for k in 0..p {
                    d[k] -= weight * ws.r[k];
                }
            }
            let snap_prev = series.snapshot(t0 - 1);
            let same = snap_prev.neighbors_same(prev);
            let other = snap_prev.neighbors_other(prev);
            let self_coeff = 1.0
                - if same.is_empty() { 0.0 } else { gw }
                - if other.is_empty() { 0.0 } else { gb };
            let d_prev = &mut out.d_latent[t0 - 1];
            {
                let d = &mut d_prev[prev * p..(prev + 1) * p];
                for k in 0..p {
                    d[k] += weight * self_coeff * ws.r[k];
                }
            }
            if !same.is_empty() {
                let c = weight * gw / same.len() as f64;
                for &j in same {
                    let d = &mut d_prev[j * p..(j + 1) * p];
                    for k in 0..p {
                        d[k] += c * ws.r[k];
                    }
                }
            }
            if !other.is_empty() {
                let c = weight * gb / other.len() as f64;
                for &j in other {
                    let d = &mut d_prev[j * p..(j + 1) * p];
                    for k in 0..p {
                        d[k] += c * ws.r[k];
                    }
                }
            }
            let gw_role = if group == 0 { ParamRole::GammaW1 } else { ParamRole::GammaW2 };
            let dot_w: f64 = (0..p).map(|k| ws.r[k] * ws.w[k]).sum();
            let dot_b: f64 = (0..p).map(|k| ws.r[k] * ws.b[k]).sum();
            out.d_params[layout.index(gw_role, seg)] += weight * dot_w;
            out.d_params[layout.index(ParamRole::GammaB, seg)] += weight * dot_b;
        }
        LatentKind::Entering => {
            let group = series.group_of_local(t0, local);
            let m = group_mean_into(series, traj.slice(t0 - 1), p, t0 - 1, group, &mut ws.mu);
            for k in 0..p {
                ws.r[k] = (z[k] - ws.mu[k]) / hyper.phi2;
            }
            {
                let d = &mut out.d_latent[t0][local * p..(local + 1) * p];
                for k in 0..p {
                    d[k] -= weight * ws.r[k];
                }
            }
            if m > 0 {
                let c = weight / m as f64;
                let snap_prev = series.snapshot(t0 - 1);
                let d_prev = &mut out.d_latent[t0 - 1];
                for j in 0..snap_prev.n() {
                    if series.group_of_local(t0 - 1, j) == group {
                        let d = &mut d_prev[j * p..(j + 1) * p];
                        for k in 0..p {
                            d[k] += c * ws.r[k];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accum_edge(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    cfg: &ModelConfig,
    t0: usize,
    a: usize,
    b: usize,
    weight: f64,
    out: &mut GradientBundle,
) {
    let p = traj.dim();
    let params = layout.params_at(flat, t0);
    let seg = layout.segment_of(t0);
    let za = traj.pos(t0, a);
    let zb = traj.pos(t0, b);
    let dist = euclidean_distance(za, zb);
    let prev = prev_edge_indicator(series, cfg, t0, a, b);
    let mut logit = params.alpha - dist;
    if let Some(y_prev) = prev {
        logit += params.delta * y_prev;
    }
    let y = if series.snapshot(t0).is_edge(a, b) { 1.0 } else { 0.0 };
    let dl = weight * (y - sigmoid(logit));
    out.d_params[layout.index(ParamRole::Alpha, seg)] += dl;
    if let Some(y_prev) = prev {
        out.d_params[layout.index(ParamRole::Delta, seg)] += dl * y_prev;
    }
    // Subgradient convention: zero vector at coincident positions.
    if dist > 0.0 {
        let slice = &mut out.d_latent[t0];
        for k in 0..p {
            let dk = (za[k] - zb[k]) / dist;
            slice[a * p + k] -= dl * dk;
            slice[b * p + k] += dl * dk;
        }
    }
}

fn accum_priors(
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    weight: f64,
    out: &mut GradientBundle,
) {
    for (i, &x) in flat.iter().enumerate() {
        let (role, _) = layout.role_of(i);
        let m = hyper.prior_mean[role.slot()];
        let v = hyper.prior_var[role.slot()];
        // Tempering weight matches `prior_term_value`.
        out.d_params[i] -= weight * (x - m) / (v * layout.copies_of(role) as f64);
    }
}

/// Exact gradient of the full log posterior.
pub fn grad_full(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
) -> Result<GradientBundle> {
    hyper.validate()?;
    grad_subsampled_weighted(series, traj, layout, flat, hyper, cfg, &TermSample::full(series), 1.0, 1.0)
}

/// Gradient of the log of the product of the sampled factors only, with
/// per-category weights applied (1.0 gives the plain subsampled gradient;
/// total/sampled per category gives the unbiased stochastic gradient).
#[allow(clippy::too_many_arguments)]
pub fn grad_subsampled_weighted(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    sample: &TermSample,
    latent_weight: f64,
    edge_weight: f64,
) -> Result<GradientBundle> {
    traj.check_shape(series)?;
    sample.validate(series)?;
    let mut out = GradientBundle::zeros(series, traj.dim(), layout.n_free());
    let mut ws = Workspace::new(traj.dim());
    for &(t, i) in &sample.latent {
        accum_latent(
            series, traj, layout, flat, hyper, t as usize, i as usize, latent_weight, &mut ws,
            &mut out,
        );
    }
    for &(t, a, b) in &sample.edges {
        accum_edge(
            series, traj, layout, flat, cfg, t as usize, a as usize, b as usize, edge_weight,
            &mut out,
        );
    }
    if sample.priors {
        accum_priors(layout, flat, hyper, 1.0, &mut out);
    }
    if !out.is_finite() {
        return Err(ClsnaError::numeric("non-finite subsampled gradient"));
    }
    Ok(out)
}

/// Gradient of the log of the product of the sampled factors.
pub fn grad_subsampled(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    sample: &TermSample,
) -> Result<GradientBundle> {
    grad_subsampled_weighted(series, traj, layout, flat, hyper, cfg, sample, 1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Group, TimeSlice};
    use crate::posterior::log_posterior_flat;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn churn_fixture() -> (NetworkSeries, LatentTrajectory) {
        let s = NetworkSeries::new(
            vec![
                ("a".into(), Group::One),
                ("b".into(), Group::One),
                ("c".into(), Group::Two),
                ("d".into(), Group::Two),
            ],
            vec![
                TimeSlice {
                    present: vec!["a".into(), "b".into(), "c".into()],
                    edges: vec![("a".into(), "b".into()), ("b".into(), "c".into())],
                },
                TimeSlice {
                    present: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                    edges: vec![("a".into(), "c".into()), ("c".into(), "d".into())],
                },
                TimeSlice {
                    present: vec!["a".into(), "c".into(), "d".into()],
                    edges: vec![("a".into(), "d".into())],
                },
            ],
        )
        .unwrap();
        let mut traj = LatentTrajectory::zeros(&s, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        traj.apply(|x| *x = rng.gen_range(-1.5..1.5));
        (s, traj)
    }

    fn fd_check(
        s: &NetworkSeries,
        traj: &LatentTrajectory,
        layout: &ParamLayout,
        flat: &[f64],
        hyper: &VarianceHyperparams,
        cfg: &ModelConfig,
        tol: f64,
    ) {
        let g = grad_full(s, traj, layout, flat, hyper, cfg).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
            let fd = (plus - minus) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (analytic - fd).abs() / denom <= tol,
                "{what}: analytic {analytic} vs fd {fd}"
            );
        };
        for i in 0..flat.len() {
            let mut fp = flat.to_vec();
            fp[i] += h;
            let plus = log_posterior_flat(s, traj, layout, &fp, hyper, cfg).unwrap();
            fp[i] -= 2.0 * h;
            let minus = log_posterior_flat(s, traj, layout, &fp, hyper, cfg).unwrap();
            check(g.d_params[i], plus, minus, &format!("param {i}"));
        }
        let p = traj.dim();
        for t0 in 0..s.t_len() {
            for c in 0..s.snapshot(t0).n() * p {
                let mut tp = traj.clone();
                tp.slice_mut(t0)[c] += h;
                let plus = log_posterior_flat(s, &tp, layout, flat, hyper, cfg).unwrap();
                tp.slice_mut(t0)[c] -= 2.0 * h;
                let minus = log_posterior_flat(s, &tp, layout, flat, hyper, cfg).unwrap();
                check(g.d_latent[t0][c], plus, minus, &format!("z[{t0}][{c}]"));
            }
        }
    }

    #[test]
    fn matches_finite_differences_with_churn() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        fd_check(&s, &traj, &layout, &flat, &VarianceHyperparams::default(), &ModelConfig::default(), 1e-4);
    }

    #[test]
    fn matches_finite_differences_segmented() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::segmented(s.t_len(), 2, false).unwrap();
        let flat = [0.8, 1.5, 0.2, -0.1, 0.5, 0.4, 0.1, -0.3];
        fd_check(&s, &traj, &layout, &flat, &VarianceHyperparams::default(), &ModelConfig::default(), 1e-4);
    }

    #[test]
    fn separable_gamma_gradient_with_decoupled_dynamics() {
        // With all gammas and delta zero, the gamma_w1 gradient reduces to
        // the sum over retained group-one transitions of <residual, within>.
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.3, 0.0, 0.0, 0.0, 0.0];
        let hyper = VarianceHyperparams::default();
        let g = grad_full(&s, &traj, &layout, &flat, &hyper, &ModelConfig::default()).unwrap();

        let p = traj.dim();
        let mut expected = 0.0;
        for t0 in 1..s.t_len() {
            for local in 0..s.snapshot(t0).n() {
                if latent_kind(&s, t0, local) != LatentKind::Retained {
                    continue;
                }
                let prev = s.prev_local(t0, local).unwrap();
                if s.group_of_local(t0, local) != Group::One {
                    continue;
                }
                let mut w = vec![0.0; p];
                let mut b = vec![0.0; p];
                attractors_into(&s, traj.slice(t0 - 1), p, t0 - 1, prev, &mut w, &mut b);
                // With gamma = 0 the transition mean is the previous position.
                let z = traj.pos(t0, local);
                let zp = traj.pos(t0 - 1, prev);
                for k in 0..p {
                    expected += (z[k] - zp[k]) / hyper.sigma2 * w[k];
                }
            }
        }
        // Prior on gamma_w1 at value 0 with mean 0.5, var 100.
        expected += (hyper.prior_mean[2] - 0.0) / hyper.prior_var[2];
        assert_abs_diff_eq!(g.d_params[2], expected, epsilon = 1e-10);
    }

    #[test]
    fn full_sample_reproduces_grad_full() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        let hyper = VarianceHyperparams::default();
        let cfg = ModelConfig::default();
        let full = grad_full(&s, &traj, &layout, &flat, &hyper, &cfg).unwrap();
        let sub = grad_subsampled(&s, &traj, &layout, &flat, &hyper, &cfg, &TermSample::full(&s))
            .unwrap();
        assert_eq!(full, sub);
    }

    #[test]
    fn empty_sample_is_zero() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        let empty = TermSample { latent: vec![], edges: vec![], priors: false };
        let g = grad_subsampled(
            &s, &traj, &layout, &flat, &VarianceHyperparams::default(), &ModelConfig::default(),
            &empty,
        )
        .unwrap();
        assert_eq!(g.inf_norm(), 0.0);
    }

    #[test]
    fn disjoint_samples_are_additive() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        let hyper = VarianceHyperparams::default();
        let cfg = ModelConfig::default();
        let full = TermSample::full(&s);
        let (la, lb) = full.latent.split_at(full.latent.len() / 2);
        let (ea, eb) = full.edges.split_at(full.edges.len() / 2);
        let sa = TermSample { latent: la.to_vec(), edges: ea.to_vec(), priors: true };
        let sb = TermSample { latent: lb.to_vec(), edges: eb.to_vec(), priors: false };
        let mut ga = grad_subsampled(&s, &traj, &layout, &flat, &hyper, &cfg, &sa).unwrap();
        let gb = grad_subsampled(&s, &traj, &layout, &flat, &hyper, &cfg, &sb).unwrap();
        ga.add(&gb);
        let gf = grad_full(&s, &traj, &layout, &flat, &hyper, &cfg).unwrap();
        for (x, y) in ga.d_params.iter().zip(&gf.d_params) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_equivariance() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        let hyper = VarianceHyperparams::default();
        let cfg = ModelConfig::default();
        let g = grad_full(&s, &traj, &layout, &flat, &hyper, &cfg).unwrap();

        let theta: f64 = 1.1;
        let (c, sn) = (theta.cos(), theta.sin());
        let rot = |v: &[f64]| [c * v[0] - sn * v[1], sn * v[0] + c * v[1]];
        let mut rotated = traj.clone();
        for t0 in 0..s.t_len() {
            for i in 0..s.snapshot(t0).n() {
                let r = rot(traj.pos(t0, i));
                rotated.pos_mut(t0, i).copy_from_slice(&r);
            }
        }
        let gr = grad_full(&s, &rotated, &layout, &flat, &hyper, &cfg).unwrap();
        for t0 in 0..s.t_len() {
            for i in 0..s.snapshot(t0).n() {
                let want = rot(&g.d_latent[t0][i * 2..i * 2 + 2]);
                let got = &gr.d_latent[t0][i * 2..i * 2 + 2];
                assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-10);
                assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn single_term_draws_are_unbiased() {
        let (s, traj) = churn_fixture();
        let layout = ParamLayout::unsegmented(s.t_len());
        let flat = [0.8, 1.5, 0.25, -0.1, 0.5];
        let hyper = VarianceHyperparams::default();
        let cfg = ModelConfig::default();
        let full = grad_full(&s, &traj, &layout, &flat, &hyper, &cfg).unwrap();
        let prior_only = grad_subsampled(
            &s, &traj, &layout, &flat, &hyper, &cfg,
            &TermSample { latent: vec![], edges: vec![], priors: true },
        )
        .unwrap();

        let all = TermSample::full(&s);
        let n_terms = all.latent.len() + all.edges.len();
        let n_draws = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mean = GradientBundle::zeros(&s, traj.dim(), layout.n_free());
        let mut sq_alpha = 0.0f64;
        for _ in 0..n_draws {
            let k = rng.gen_range(0..n_terms);
            let one = if k < all.latent.len() {
                TermSample { latent: vec![all.latent[k]], edges: vec![], priors: false }
            } else {
                TermSample { latent: vec![], edges: vec![all.edges[k - all.latent.len()]], priors: false }
            };
            let g = grad_subsampled(&s, &traj, &layout, &flat, &hyper, &cfg, &one).unwrap();
            sq_alpha += (n_terms as f64 * g.d_params[0]).powi(2);
            for (m, x) in mean.d_params.iter_mut().zip(&g.d_params) {
                *m += n_terms as f64 * x / n_draws as f64;
            }
        }
        // Monte Carlo estimate (plus the always-included priors) should fall
        // within 3 standard errors of the exact alpha gradient.
        let est = mean.d_params[0] + prior_only.d_params[0];
        let var = sq_alpha / n_draws as f64 - (mean.d_params[0]).powi(2);
        let se = (var / n_draws as f64).sqrt();
        assert!(
            (est - full.d_params[0]).abs() <= 3.0 * se,
            "est {est} vs full {} (se {se})",
            full.d_params[0]
        );
    }

    #[test]
    fn dyad_decode_round_trips() {
        for n in 2..=12 {
            let mut k = 0;
            for a in 0..n {
                for b in (a + 1)..n {
                    assert_eq!(decode_dyad(n, k), (a, b), "n={n} k={k}");
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn sampled_fraction_counts() {
        let (s, _) = churn_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lt, et) = term_counts(&s);
        let sample = sample_terms(&s, 0.5, &mut rng);
        assert_eq!(sample.latent.len(), lt.div_ceil(2));
        assert_eq!(sample.edges.len(), et.div_ceil(2));
        assert!(sample.priors);
        let all = sample_terms(&s, 1.0, &mut rng);
        assert_eq!(all.latent.len(), lt);
        assert_eq!(all.edges.len(), et);
    }
}
