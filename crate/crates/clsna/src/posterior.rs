//! Log-posterior evaluation as a sum of per-node latent factors, per-dyad
//! edge factors and the global-parameter priors.
//!
//! The factorization mirrors the generative model: at t = 1 every present
//! node contributes an isotropic Gaussian prior factor; at t >= 2 a node
//! contributes either a transition factor (present at t-1) or an
//! entering-node factor (absent at t-1); every unordered present dyad
//! contributes one Bernoulli factor per time step. Summation order is fixed,
//! so repeated evaluations are bit-identical.

use crate::error::{ClsnaError, Result};
use crate::model::{
    bernoulli_loglik, euclidean_distance, group_mean_into, transition_mean_into, LatentTrajectory,
    ModelConfig, NetworkSeries, VarianceHyperparams,
};
use crate::model::GlobalParams;
use crate::params::ParamLayout;

const LN_2PI: f64 = 1.8378770664093453;

/// Log-density of an isotropic Gaussian, `||x - mu||^2` given directly.
pub(crate) fn ln_gauss_iso(sq_norm: f64, dim: usize, var: f64) -> f64 {
    -0.5 * dim as f64 * (LN_2PI + var.ln()) - sq_norm / (2.0 * var)
}

/// How a node's latent factor at a given time is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    /// t = 1 prior factor, N(0, tau^2 I).
    Initial,
    /// Present at t-1: transition factor N(mu, sigma^2 I).
    Retained,
    /// Absent at t-1: entering-node factor N(group mean, phi^2 I).
    Entering,
}

/// Classification of the latent factor for node `local` at time `t0`.
pub fn latent_kind(series: &NetworkSeries, t0: usize, local: usize) -> LatentKind {
    if t0 == 0 {
        LatentKind::Initial
    } else if series.prev_local(t0, local).is_some() {
        LatentKind::Retained
    } else {
        LatentKind::Entering
    }
}

/// Previous-edge indicator for dyad (a, b) at time `t0` under the configured
/// delta rule; `None` means the persistence term does not apply.
pub(crate) fn prev_edge_indicator(
    series: &NetworkSeries,
    cfg: &ModelConfig,
    t0: usize,
    a: usize,
    b: usize,
) -> Option<f64> {
    if t0 == 0 {
        return None;
    }
    let pa = series.prev_local(t0, a);
    let pb = series.prev_local(t0, b);
    match cfg.delta_rule {
        crate::model::DeltaRule::BothPresentPrev => match (pa, pb) {
            (Some(la), Some(lb)) => {
                Some(if series.snapshot(t0 - 1).is_edge(la, lb) { 1.0 } else { 0.0 })
            }
            _ => None,
        },
        crate::model::DeltaRule::LiteralAbsent => match (pa, pb) {
            (Some(_), Some(_)) => None,
            // Previous edge indicator is undefined for a churned dyad; the
            // literal reading then contributes delta * 0.
            _ => Some(0.0),
        },
    }
}

/// Value of the latent factor for node `local` at time `t0`.
pub(crate) fn latent_term_value(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    t0: usize,
    local: usize,
) -> f64 {
    let p = traj.dim();
    let z = traj.pos(t0, local);
    match latent_kind(series, t0, local) {
        LatentKind::Initial => {
            let sq: f64 = z.iter().map(|x| x * x).sum();
            ln_gauss_iso(sq, p, hyper.tau2)
        }
        LatentKind::Retained => {
            let prev_local = series.prev_local(t0, local).expect("retained node");
            let params = layout.params_at(flat, t0);
            let mut w = vec![0.0; p];
            let mut b = vec![0.0; p];
            let mut mu = vec![0.0; p];
            transition_mean_into(
                series,
                traj.slice(t0 - 1),
                p,
                t0 - 1,
                prev_local,
                &params,
                &mut w,
                &mut b,
                &mut mu,
            );
            let sq: f64 = z.iter().zip(&mu).map(|(x, m)| (x - m) * (x - m)).sum();
            ln_gauss_iso(sq, p, hyper.sigma2)
        }
        LatentKind::Entering => {
            let group = series.group_of_local(t0, local);
            let mut mu = vec![0.0; p];
            group_mean_into(series, traj.slice(t0 - 1), p, t0 - 1, group, &mut mu);
            let sq: f64 = z.iter().zip(&mu).map(|(x, m)| (x - m) * (x - m)).sum();
            ln_gauss_iso(sq, p, hyper.phi2)
        }
    }
}

/// Value of the Bernoulli edge factor for dyad (a, b) at time `t0`.
pub(crate) fn edge_term_value(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    cfg: &ModelConfig,
    t0: usize,
    a: usize,
    b: usize,
) -> f64 {
    let params = layout.params_at(flat, t0);
    let snap = series.snapshot(t0);
    let dist = euclidean_distance(traj.pos(t0, a), traj.pos(t0, b));
    let mut logit = params.alpha - dist;
    if let Some(y_prev) = prev_edge_indicator(series, cfg, t0, a, b) {
        logit += params.delta * y_prev;
    }
    bernoulli_loglik(snap.is_edge(a, b), logit)
}

/// Value of the Gaussian priors on all free global parameters.
pub(crate) fn prior_term_value(
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
) -> f64 {
    let mut acc = 0.0;
    for (i, &x) in flat.iter().enumerate() {
        let (role, _) = layout.role_of(i);
        let m = hyper.prior_mean[role.slot()];
        let v = hyper.prior_var[role.slot()];
        // Tempered by 1/copies so equal segments reproduce the un-segmented
        // posterior exactly.
        acc += ln_gauss_iso((x - m) * (x - m), 1, v) / layout.copies_of(role) as f64;
    }
    acc
}

fn check_inputs(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
) -> Result<()> {
    traj.check_shape(series)?;
    hyper.validate()?;
    if layout.t_len() != series.t_len() {
        return Err(ClsnaError::input(format!(
            "parameter layout covers {} time steps, series has {}",
            layout.t_len(),
            series.t_len()
        )));
    }
    if flat.len() != layout.n_free() {
        return Err(ClsnaError::input(format!(
            "flat parameter vector has {} entries, layout needs {}",
            flat.len(),
            layout.n_free()
        )));
    }
    Ok(())
}

/// Log of the unnormalized posterior density at (traj, flat parameters).
pub fn log_posterior_flat(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
) -> Result<f64> {
    check_inputs(series, traj, layout, flat, hyper)?;
    let mut total = prior_term_value(layout, flat, hyper);
    if !total.is_finite() {
        return Err(ClsnaError::numeric("non-finite global-parameter prior term"));
    }
    for t0 in 0..series.t_len() {
        let snap = series.snapshot(t0);
        let mut slice_sum = 0.0;
        for local in 0..snap.n() {
            slice_sum += latent_term_value(series, traj, layout, flat, hyper, t0, local);
        }
        for a in 0..snap.n() {
            for b in (a + 1)..snap.n() {
                slice_sum += edge_term_value(series, traj, layout, flat, cfg, t0, a, b);
            }
        }
        if !slice_sum.is_finite() {
            return Err(locate_nonfinite(series, traj, layout, flat, hyper, cfg, t0));
        }
        total += slice_sum;
    }
    Ok(total)
}

fn locate_nonfinite(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    t0: usize,
) -> ClsnaError {
    let snap = series.snapshot(t0);
    for local in 0..snap.n() {
        if !latent_term_value(series, traj, layout, flat, hyper, t0, local).is_finite() {
            return ClsnaError::numeric(format!(
                "non-finite latent factor at time {} node '{}'",
                t0 + 1,
                series.node_name(snap.global_of_local(local))
            ));
        }
    }
    for a in 0..snap.n() {
        for b in (a + 1)..snap.n() {
            if !edge_term_value(series, traj, layout, flat, cfg, t0, a, b).is_finite() {
                return ClsnaError::numeric(format!(
                    "non-finite edge factor at time {} dyad ('{}', '{}')",
                    t0 + 1,
                    series.node_name(snap.global_of_local(a)),
                    series.node_name(snap.global_of_local(b))
                ));
            }
        }
    }
    ClsnaError::numeric(format!("non-finite contribution at time {}", t0 + 1))
}

/// Log posterior for the un-segmented model.
pub fn log_posterior(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    params: &GlobalParams,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
) -> Result<f64> {
    let layout = ParamLayout::unsegmented(series.t_len());
    log_posterior_flat(series, traj, &layout, &params.as_array(), hyper, cfg)
}

/// Sum of the Bernoulli edge factors only, the observation log-likelihood
/// entering BIC.
pub fn edge_log_likelihood_flat(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    layout: &ParamLayout,
    flat: &[f64],
    cfg: &ModelConfig,
) -> Result<f64> {
    traj.check_shape(series)?;
    let mut total = 0.0;
    for t0 in 0..series.t_len() {
        let n = series.snapshot(t0).n();
        for a in 0..n {
            for b in (a + 1)..n {
                total += edge_term_value(series, traj, layout, flat, cfg, t0, a, b);
            }
        }
    }
    if !total.is_finite() {
        return Err(ClsnaError::numeric("non-finite edge log-likelihood"));
    }
    Ok(total)
}
