//! Change-point model fitting and BIC comparison.
//!
//! A single candidate change-point t* splits [1, T] into two segments with
//! separate attractor parameters (optionally also separate alpha, delta);
//! the latent trajectory stays global. Candidates are compared by BIC on
//! the edge log-likelihood at the MAP.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ClsnaError, Result};
use crate::model::{GlobalParams, ModelConfig, NetworkSeries, VarianceHyperparams};
use crate::optimizer::{fit_flat, FitResult, OptimizerConfig};
use crate::params::ParamLayout;
use crate::posterior::edge_log_likelihood_flat;

/// A fitted change-point model with its BIC bookkeeping.
#[derive(Debug, Clone)]
pub struct SegmentedFit {
    /// 1-based change-point: segment one covers t < t*, segment two t >= t*.
    pub changepoint: usize,
    pub fit: FitResult,
    pub bic: f64,
    /// Edge (observation) log-likelihood at the MAP.
    pub log_likelihood_at_map: f64,
    pub n_free_params: usize,
}

impl SegmentedFit {
    /// Parameter estimates per segment.
    pub fn segment_params(&self) -> Vec<GlobalParams> {
        self.fit.params_per_segment()
    }
}

/// BIC = -2 * (edge log-likelihood at the MAP) + k * log(N_obs), with k the
/// number of free global parameters and N_obs the total dyad-time count.
/// Latent coordinates are shared across candidates and not counted.
pub fn bic(fit: &FitResult, series: &NetworkSeries) -> Result<f64> {
    if !fit.final_log_posterior.is_finite() {
        return Err(ClsnaError::input("cannot compute BIC from a non-finite fit"));
    }
    let ll = edge_log_likelihood_flat(series, &fit.latent_hat, &fit.layout, &fit.flat, &ModelConfig::default())?;
    Ok(bic_from_parts(ll, fit.layout.n_free(), series.total_dyads()))
}

/// The BIC formula itself, for recomputation from stored components.
pub fn bic_from_parts(edge_log_likelihood: f64, n_free_params: usize, n_obs: usize) -> f64 {
    -2.0 * edge_log_likelihood + n_free_params as f64 * (n_obs as f64).ln()
}

/// BIC with an explicit model configuration (delta rule).
pub fn bic_with(fit: &FitResult, series: &NetworkSeries, cfg: &ModelConfig) -> Result<f64> {
    if !fit.final_log_posterior.is_finite() {
        return Err(ClsnaError::input("cannot compute BIC from a non-finite fit"));
    }
    let ll = edge_log_likelihood_flat(series, &fit.latent_hat, &fit.layout, &fit.flat, cfg)?;
    Ok(bic_from_parts(ll, fit.layout.n_free(), series.total_dyads()))
}

/// MAP fit with a change-point at `t*` (1-based, in [2, T-1]). With
/// `split_baseline` the baseline parameters alpha, delta split too;
/// otherwise only the attractor coefficients do. `warm` optionally
/// initializes from an un-segmented fit (parameters broadcast into both
/// segments, latent trajectory reused).
pub fn fit_segmented(
    series: &NetworkSeries,
    changepoint: usize,
    split_baseline: bool,
    dim: usize,
    warm: Option<&FitResult>,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<SegmentedFit> {
    let layout = ParamLayout::segmented(series.t_len(), changepoint, split_baseline)?;
    let (init_flat, init_traj, opt) = match warm {
        Some(w) => {
            if w.latent_hat.dim() != dim {
                return Err(ClsnaError::input("warm-start dimension mismatch"));
            }
            let flat = layout.broadcast(&w.params_hat());
            // Warm starts skip the sign warmup; the latent configuration is
            // already organized.
            let o = OptimizerConfig { sign_warmup_iters: 0, ..*opt };
            (Some(flat), Some(&w.latent_hat), o)
        }
        None => (None, None, *opt),
    };
    let fit = fit_flat(
        series,
        &layout,
        dim,
        init_flat.as_deref(),
        init_traj,
        hyper,
        cfg,
        &opt,
        None,
    )?;
    let log_likelihood_at_map =
        edge_log_likelihood_flat(series, &fit.latent_hat, &layout, &fit.flat, cfg)?;
    let n_free_params = layout.n_free();
    let bic = bic_from_parts(log_likelihood_at_map, n_free_params, series.total_dyads());
    Ok(SegmentedFit { changepoint, fit, bic, log_likelihood_at_map, n_free_params })
}

/// One scan row. Failed candidates carry the error text instead of a BIC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub changepoint: usize,
    pub bic: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Result of a change-point scan, rows sorted by BIC (failures last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    /// Candidate with the lowest BIC, if any candidate succeeded.
    pub best: Option<usize>,
    /// BIC of the un-segmented reference fit.
    pub unsegmented_bic: f64,
}

/// Fits every candidate change-point (plus the un-segmented reference) and
/// ranks them by BIC. Individual candidate failures are recorded, not fatal.
/// `warm` seeds every candidate from the same un-segmented fit; pass the
/// fit whose BIC should serve as the reference.
pub fn changepoint_scan(
    series: &NetworkSeries,
    candidates: &[usize],
    split_baseline: bool,
    dim: usize,
    warm: &FitResult,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<ScanResult> {
    if candidates.is_empty() {
        return Err(ClsnaError::input("empty candidate range"));
    }
    let unsegmented_bic = bic_with(warm, series, cfg)?;
    let mut rows = Vec::with_capacity(candidates.len());
    for &t in candidates {
        match fit_segmented(series, t, split_baseline, dim, Some(warm), hyper, cfg, opt) {
            Ok(sf) => rows.push(ScanRow {
                changepoint: t,
                bic: Some(sf.bic),
                converged: sf.fit.converged,
                error: None,
            }),
            Err(e) => rows.push(ScanRow {
                changepoint: t,
                bic: None,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    rows.sort_by(|a, b| match (a.bic, b.bic) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.changepoint.cmp(&b.changepoint),
    });
    let best = rows.first().and_then(|r| r.bic.map(|_| r.changepoint));
    Ok(ScanResult { rows, best, unsegmented_bic })
}

/// CSV export of a scan (changepoint, bic, converged).
pub fn write_scan_csv<W: Write>(scan: &ScanResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["changepoint", "bic", "converged"])?;
    for r in &scan.rows {
        w.write_record([
            r.changepoint.to_string(),
            r.bic.map(|b| format!("{b:.16e}")).unwrap_or_else(|| "failed".into()),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
