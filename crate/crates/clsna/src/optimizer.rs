//! SGD-based MAP estimation: momentum steps, sign-gradient warmup for the
//! global parameters, the update-magnitude stopping rule, and the
//! higher-dimension-then-PCA staged initialization.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ClsnaError, Result};
use crate::gradients::{grad_subsampled_weighted, sample_terms, term_counts, TermSample};
use crate::model::{
    GlobalParams, LatentTrajectory, ModelConfig, NetworkSeries, VarianceHyperparams,
};
use crate::params::ParamLayout;
use crate::posterior::log_posterior_flat;

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Step size for latent positions.
    pub step_latent: f64,
    /// Step size for the global parameters. Used as-is in sign-warmup mode;
    /// scaled by `plain_params_scale` in plain mode.
    pub step_params: f64,
    /// After the warmup, plain-mode global-parameter steps use
    /// `step_params * plain_params_scale`. The raw warmup step applied to a
    /// momentum-accumulated gradient overshoots on the sharply curved
    /// baseline parameters, so plain mode backs off by this factor.
    pub plain_params_scale: f64,
    pub momentum: f64,
    pub max_iters: usize,
    /// Iterations between stopping checks and trace rows.
    pub check_every: usize,
    /// Update infinity-norm threshold for convergence.
    pub stop_eps: f64,
    /// Fraction of posterior factors sampled per step; 1.0 = full gradient.
    pub batch_fraction: f64,
    /// Leading iterations that update the global parameters by the sign of
    /// their gradient.
    pub sign_warmup_iters: usize,
    pub seed: u64,
    /// Record a trace row at every stopping check.
    pub record_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> OptimizerConfig {
        OptimizerConfig {
            step_latent: 1e-2,
            step_params: 1e-3,
            plain_params_scale: 0.1,
            momentum: 0.9,
            max_iters: 2000,
            check_every: 100,
            stop_eps: 1e-4,
            batch_fraction: 1.0,
            sign_warmup_iters: 400,
            seed: 0,
            record_trace: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_latent > 0.0 && self.step_params > 0.0 && self.plain_params_scale > 0.0) {
            return Err(ClsnaError::input("step sizes must be strictly positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ClsnaError::input("momentum must lie in [0, 1)"));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(ClsnaError::input("batch_fraction must lie in (0, 1]"));
        }
        if self.check_every == 0 || self.max_iters == 0 {
            return Err(ClsnaError::input("max_iters and check_every must be positive"));
        }
        if !(self.stop_eps > 0.0) {
            return Err(ClsnaError::input("stop_eps must be strictly positive"));
        }
        Ok(())
    }

    /// Scale both step sizes, as the anchored re-optimizations do.
    pub fn with_scaled_steps(mut self, factor: f64) -> OptimizerConfig {
        self.step_latent *= factor;
        self.step_params *= factor;
        self
    }
}

/// One stopping-check record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_posterior: f64,
    pub update_norm: f64,
}

/// A fitted model over a flat free-parameter vector (supports segmented
/// layouts; plain fits use the unsegmented layout).
#[derive(Debug, Clone)]
pub struct FitResult {
    pub flat: Vec<f64>,
    pub layout: ParamLayout,
    pub latent_hat: LatentTrajectory,
    /// Full log posterior recomputed at the returned point.
    pub final_log_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl FitResult {
    /// Global parameter estimates; for segmented fits this is segment 1.
    pub fn params_hat(&self) -> GlobalParams {
        self.layout.params_at(&self.flat, 0)
    }

    pub fn params_per_segment(&self) -> Vec<GlobalParams> {
        self.layout.per_segment(&self.flat)
    }
}

/// Writes a trace as a CSV table (iteration, log_posterior, update_norm).
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "log_posterior", "update_norm"])?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{:.16e}", row.log_posterior),
            format!("{:.16e}", row.update_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Holds one coordinate of the flat parameter vector fixed during a fit
/// (Algorithm 3's anchored re-optimization).
#[derive(Debug, Clone, Copy)]
pub struct Clamp {
    pub index: usize,
    pub value: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Random initialization from the initial-time latent prior N(0, tau^2).
fn random_latent(
    series: &NetworkSeries,
    dim: usize,
    tau2: f64,
    rng: &mut ChaCha8Rng,
) -> LatentTrajectory {
    let normal = Normal::new(0.0, tau2.sqrt()).unwrap();
    let mut traj = LatentTrajectory::zeros(series, dim);
    traj.apply(|x| *x = normal.sample(rng));
    traj
}

/// Core SGD MAP fit over a flat parameter vector. `init_flat` / `init_traj`
/// default to the prior means and a standard-normal draw; `clamp` pins one
/// flat coordinate for the duration (re-applied after every step).
#[allow(clippy::too_many_arguments)]
pub fn fit_flat(
    series: &NetworkSeries,
    layout: &ParamLayout,
    dim: usize,
    init_flat: Option<&[f64]>,
    init_traj: Option<&LatentTrajectory>,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
    clamp: Option<Clamp>,
) -> Result<FitResult> {
    opt.validate()?;
    hyper.validate()?;
    if layout.t_len() != series.t_len() {
        return Err(ClsnaError::input("layout time length does not match the series"));
    }
    let n_free = layout.n_free();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);

    let mut flat: Vec<f64> = match init_flat {
        Some(f) => {
            if f.len() != n_free {
                return Err(ClsnaError::input(format!(
                    "initial parameter vector has {} entries, layout needs {n_free}",
                    f.len()
                )));
            }
            f.to_vec()
        }
        None => layout.broadcast(&GlobalParams::from_array(hyper.prior_mean)),
    };
    let mut traj = match init_traj {
        Some(t) => {
            t.check_shape(series)?;
            if t.dim() != dim {
                return Err(ClsnaError::input(format!(
                    "initial trajectory dimension {} does not match requested {dim}",
                    t.dim()
                )));
            }
            t.clone()
        }
        None => random_latent(series, dim, hyper.tau2, &mut rng),
    };
    if let Some(c) = clamp {
        if c.index >= n_free {
            return Err(ClsnaError::input(format!("clamp index {} out of range", c.index)));
        }
        flat[c.index] = c.value;
    }

    let (latent_total, edge_total) = term_counts(series);
    let full_sample = TermSample::full(series);
    let stochastic = opt.batch_fraction < 1.0;

    let mut vel_params = vec![0.0; n_free];
    let mut vel_latent: Vec<Vec<f64>> = (0..series.t_len())
        .map(|t| vec![0.0; series.snapshot(t).n() * dim])
        .collect();

    let eval = |flat: &[f64], traj: &LatentTrajectory| -> Result<f64> {
        log_posterior_flat(series, traj, layout, flat, hyper, cfg)
    };

    let mut best_flat = flat.clone();
    let mut best_traj = traj.clone();
    let mut best_lp = eval(&flat, &traj)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 0..opt.max_iters {
        iterations = k + 1;
        let grad = if stochastic {
            let s = sample_terms(series, opt.batch_fraction, &mut rng);
            let wl = latent_total as f64 / s.latent.len().max(1) as f64;
            let we = edge_total as f64 / s.edges.len().max(1) as f64;
            grad_subsampled_weighted(series, &traj, layout, &flat, hyper, cfg, &s, wl, we)?
        } else {
            grad_subsampled_weighted(
                series, &traj, layout, &flat, hyper, cfg, &full_sample, 1.0, 1.0,
            )?
        };
        if !grad.is_finite() {
            return Err(ClsnaError::numeric(format!(
                "non-finite gradient at iteration {iterations}"
            )));
        }

        let sign_mode = k < opt.sign_warmup_iters;
        let mut update_norm = 0.0f64;
        for i in 0..n_free {
            let upd = if sign_mode {
                opt.step_params * sign(grad.d_params[i])
            } else {
                vel_params[i] = opt.momentum * vel_params[i] + grad.d_params[i];
                opt.step_params * opt.plain_params_scale * vel_params[i]
            };
            let upd = match clamp {
                Some(c) if c.index == i => 0.0,
                _ => upd,
            };
            flat[i] += upd;
            update_norm = update_norm.max(upd.abs());
        }
        for t0 in 0..series.t_len() {
            let v = &mut vel_latent[t0];
            let z = traj.slice_mut(t0);
            let g = &grad.d_latent[t0];
            for j in 0..z.len() {
                v[j] = opt.momentum * v[j] + g[j];
                let upd = opt.step_latent * v[j];
                z[j] += upd;
                update_norm = update_norm.max(upd.abs());
            }
        }

        if (k + 1) % opt.check_every == 0 || k + 1 == opt.max_iters {
            let lp = eval(&flat, &traj)?;
            if opt.record_trace {
                trace.push(TraceRow { iteration: k + 1, log_posterior: lp, update_norm });
            }
            if lp > best_lp {
                best_lp = lp;
                best_flat.copy_from_slice(&flat);
                best_traj = traj.clone();
            }
            if !sign_mode && update_norm < opt.stop_eps {
                converged = true;
                break;
            }
        }
    }

    if !best_lp.is_finite() {
        return Err(ClsnaError::numeric(format!(
            "log posterior non-finite after {iterations} iterations"
        )));
    }
    Ok(FitResult {
        flat: best_flat,
        layout: *layout,
        latent_hat: best_traj,
        final_log_posterior: best_lp,
        iterations,
        converged,
        trace,
    })
}

/// MAP point estimation (Algorithm 2): un-segmented layout, sign-gradient
/// warmup then plain momentum SGD, best-seen iterate returned.
pub fn fit_map(
    series: &NetworkSeries,
    dim: usize,
    init: Option<(&GlobalParams, &LatentTrajectory)>,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    let layout = ParamLayout::unsegmented(series.t_len());
    let flat_init: Option<Vec<f64>> = init.map(|(p, _)| p.as_array().to_vec());
    fit_flat(
        series,
        &layout,
        dim,
        flat_init.as_deref(),
        init.map(|(_, z)| z),
        hyper,
        cfg,
        opt,
        None,
    )
}

/// Projects the stacked, mean-centered positions of a trajectory onto their
/// top `p_target` principal components.
pub fn pca_project(traj: &LatentTrajectory, p_target: usize) -> Result<LatentTrajectory> {
    let q = traj.dim();
    if p_target >= q || p_target == 0 {
        return Err(ClsnaError::input(format!(
            "PCA target dimension {p_target} must lie in [1, {})",
            q
        )));
    }
    let rows: usize = (0..traj.t_len()).map(|t| traj.slice(t).len() / q).sum();
    if rows == 0 {
        return Err(ClsnaError::input("empty trajectory"));
    }
    let mut stacked = DMatrix::zeros(rows, q);
    let mut r = 0;
    for t0 in 0..traj.t_len() {
        let z = traj.slice(t0);
        for i in 0..z.len() / q {
            for k in 0..q {
                stacked[(r, k)] = z[i * q + k];
            }
            r += 1;
        }
    }
    let mean: Vec<f64> = (0..q).map(|k| stacked.column(k).sum() / rows as f64).collect();
    for r in 0..rows {
        for k in 0..q {
            stacked[(r, k)] -= mean[k];
        }
    }
    let svd = stacked.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    // rows x p_target scores.
    let mut coords = Vec::with_capacity(traj.t_len());
    let mut r = 0;
    for t0 in 0..traj.t_len() {
        let n = traj.slice(t0).len() / q;
        let mut z = vec![0.0; n * p_target];
        for i in 0..n {
            for (kk, &comp) in order[..p_target].iter().enumerate() {
                let mut s = 0.0;
                for k in 0..q {
                    s += stacked[(r, k)] * v_t[(comp, k)];
                }
                z[i * p_target + kk] = s;
            }
            r += 1;
        }
        coords.push(z);
    }
    Ok(LatentTrajectory::from_coords(p_target, coords))
}

/// Staged fit: estimate in `q_over` dimensions, project the latent positions
/// onto their top `p_target` principal components, and refit in `p_target`
/// dimensions from that initialization.
pub fn fit_map_staged(
    series: &NetworkSeries,
    p_target: usize,
    q_over: usize,
    hyper: &VarianceHyperparams,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
) -> Result<FitResult> {
    if q_over <= p_target || p_target == 0 {
        return Err(ClsnaError::input(format!(
            "staged fit needs q_over > p_target >= 1, got q_over={q_over}, p_target={p_target}"
        )));
    }
    let stage1 = fit_map(series, q_over, None, hyper, cfg, opt)?;
    let projected = pca_project(&stage1.latent_hat, p_target)?;
    let layout = ParamLayout::unsegmented(series.t_len());
    fit_flat(series, &layout, p_target, None, Some(&projected), hyper, cfg, opt, None)
}

/// Orthogonal Procrustes alignment of `z_a` onto `z_b`: returns the aligned
/// copy of `z_a`, the orthogonal matrix Q minimizing ||Z_a Q - Z_b||_F, and
/// the residual Frobenius norm.
pub fn procrustes_align(
    z_a: &LatentTrajectory,
    z_b: &LatentTrajectory,
) -> Result<(LatentTrajectory, DMatrix<f64>, f64)> {
    let p = z_a.dim();
    if z_b.dim() != p || z_a.t_len() != z_b.t_len() {
        return Err(ClsnaError::input("trajectories differ in shape"));
    }
    for t0 in 0..z_a.t_len() {
        if z_a.slice(t0).len() != z_b.slice(t0).len() {
            return Err(ClsnaError::input(format!(
                "trajectories differ in node count at time {}",
                t0 + 1
            )));
        }
    }
    // M = sum_i a_i b_i^T over all stacked positions.
    let mut m = DMatrix::zeros(p, p);
    for t0 in 0..z_a.t_len() {
        let a = z_a.slice(t0);
        let b = z_b.slice(t0);
        for i in 0..a.len() / p {
            for r in 0..p {
                for c in 0..p {
                    m[(r, c)] += a[i * p + r] * b[i * p + c];
                }
            }
        }
    }
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let q = u * v_t;

    let mut aligned = z_a.clone();
    let mut residual = 0.0;
    for t0 in 0..z_a.t_len() {
        let b = z_b.slice(t0).to_vec();
        let z = aligned.slice_mut(t0);
        for i in 0..z.len() / p {
            let mut rot = vec![0.0; p];
            for c in 0..p {
                for r in 0..p {
                    rot[c] += z[i * p + r] * q[(r, c)];
                }
            }
            for c in 0..p {
                let d = rot[c] - b[i * p + c];
                residual += d * d;
                z[i * p + c] = rot[c];
            }
        }
    }
    Ok((aligned, q, residual.sqrt()))
}
