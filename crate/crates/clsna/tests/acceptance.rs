//! Acceptance suite. Each test covers one acceptance criterion and prints a
//! single `criterion N (<name>): PASS|FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 3-5 are replication studies (20 seeds each) and dominate the
//! suite's runtime.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clsna::gradients::grad_full;
use clsna::model::{
    DeltaRule, GlobalParams, Group, LatentTrajectory, ModelConfig, NetworkSeries, TimeSlice,
    VarianceHyperparams,
};
use clsna::optimizer::{fit_map_staged, procrustes_align, OptimizerConfig};
use clsna::params::ParamLayout;
use clsna::posterior::log_posterior_flat;
use clsna::selection::changepoint_scan;
use clsna::simulator::{flocking_spec, polarization_spec, simulate, simulate_piecewise};
use clsna::uncertainty::{
    diagnostic_linearity, diagnostic_normality, perturb_estimate, ClsnaPerturb, DensityTarget,
    LogDensity, VarianceEstimate,
};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    println!("criterion {n} ({name}): {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Random small fixtures (criteria 1, 7, 8)
// ---------------------------------------------------------------------------

/// A random series with churn: n nodes, t_len times, each node present per
/// time with probability 0.8 (floors ensure nonempty slices), random edges.
fn random_fixture(
    rng: &mut ChaCha8Rng,
    n: usize,
    t_len: usize,
) -> (NetworkSeries, LatentTrajectory) {
    let nodes: Vec<(String, Group)> = (0..n)
        .map(|i| {
            (format!("v{i}"), if i % 2 == 0 { Group::One } else { Group::Two })
        })
        .collect();
    let mut times = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let mut present: Vec<String> = nodes
            .iter()
            .filter(|_| rng.gen_bool(0.8))
            .map(|(name, _)| name.clone())
            .collect();
        if present.is_empty() {
            present.push(nodes[rng.gen_range(0..n)].0.clone());
        }
        let mut edges = Vec::new();
        for a in 0..present.len() {
            for b in (a + 1)..present.len() {
                if rng.gen_bool(0.5) {
                    edges.push((present[a].clone(), present[b].clone()));
                }
            }
        }
        times.push(TimeSlice { present, edges });
    }
    let series = NetworkSeries::new(nodes, times).unwrap();
    let mut traj = LatentTrajectory::zeros(&series, 2);
    for t0 in 0..series.t_len() {
        for x in traj.slice_mut(t0) {
            *x = rng.gen_range(-1.5..1.5);
        }
    }
    (series, traj)
}

fn random_params(rng: &mut ChaCha8Rng) -> [f64; 5] {
    [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.6..0.6),
        rng.gen_range(-0.6..0.6),
        rng.gen_range(-0.6..0.6),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let hyper = VarianceHyperparams::default();
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..=6);
        let t_len = rng.gen_range(2..=4);
        let (series, traj) = random_fixture(&mut rng, n, t_len);
        let layout = ParamLayout::unsegmented(series.t_len());
        let flat = random_params(&mut rng);
        let g = grad_full(&series, &traj, &layout, &flat, &hyper, &cfg).unwrap();

        let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(1.0);
        for i in 0..5 {
            let mut fp = flat;
            fp[i] += h;
            let mut fm = flat;
            fm[i] -= h;
            let lp = log_posterior_flat(&series, &traj, &layout, &fp, &hyper, &cfg).unwrap();
            let lm = log_posterior_flat(&series, &traj, &layout, &fm, &hyper, &cfg).unwrap();
            max_rel = max_rel.max(rel(g.d_params[i], (lp - lm) / (2.0 * h)));
        }
        for t0 in 0..series.t_len() {
            for k in 0..traj.slice(t0).len() {
                let mut tp = traj.clone();
                tp.slice_mut(t0)[k] += h;
                let mut tm = traj.clone();
                tm.slice_mut(t0)[k] -= h;
                let lp = log_posterior_flat(&series, &tp, &layout, &flat, &hyper, &cfg).unwrap();
                let lm = log_posterior_flat(&series, &tm, &layout, &flat, &hyper, &cfg).unwrap();
                max_rel = max_rel.max(rel(g.d_latent[t0][k], (lp - lm) / (2.0 * h)));
            }
        }
    }
    verdict(
        1,
        "gradient correctness",
        max_rel <= 1e-4,
        &format!("max relative coordinate error {max_rel:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: Gaussian oracle for variance estimation
// ---------------------------------------------------------------------------

/// Independent multivariate Gaussian log-density (up to a constant).
struct Gauss {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    cov: DMatrix<f64>,
}

impl Gauss {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Gauss {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
        let precision = cov.clone().try_inverse().unwrap();
        let mean = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));
        Gauss { mean, precision, cov }
    }
}

impl LogDensity for Gauss {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.mean;
        -0.5 * (&self.precision * &d).dot(&d)
    }
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = DVector::from_column_slice(x) - &self.mean;
        let g = -(&self.precision * d);
        out.copy_from_slice(g.as_slice());
    }
}

#[test]
fn criterion_2_gaussian_variance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut max_rel = 0.0f64;
    for trial in 0..6 {
        let dim = 2 + trial % 9; // 2..=10
        let g = Gauss::random(&mut rng, dim);
        let ti = trial % dim;
        let sigma = g.cov[(ti, ti)].sqrt();
        let init: Vec<f64> = g.mean.iter().map(|m| m + 0.3).collect();
        for scale in [0.1, 0.5, 1.0, 2.0] {
            let mut target = DensityTarget::new(&g, &init, ti).unwrap();
            let est = perturb_estimate(&mut target, scale * sigma).unwrap();
            max_rel = max_rel
                .max((est.variance - g.cov[(ti, ti)]).abs() / g.cov[(ti, ti)].abs());
            for j in 0..dim {
                let truth = g.cov[(ti, j)];
                max_rel = max_rel.max((est.covariances[j] - truth).abs() / truth.abs().max(1e-6));
            }
        }
    }
    verdict(
        2,
        "Gaussian variance oracle",
        max_rel <= 1e-6,
        &format!("max relative error {max_rel:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 3-4: Table 1 recovery
// ---------------------------------------------------------------------------

struct Table1Row {
    means: [f64; 4],
    sds: [f64; 4],
    variances: [f64; 4],
}

fn fit_opts(seed: u64) -> OptimizerConfig {
    OptimizerConfig { seed, record_trace: false, ..OptimizerConfig::default() }
}

/// Variance for one target, escalating eta when the drop degenerates.
fn variance_with_ladder(ctx: &ClsnaPerturb, name: &str) -> Result<VarianceEstimate, String> {
    for eta in [0.3, 0.5, 0.8] {
        match clsna::uncertainty::estimate_variance_with(ctx, name, Some(eta)) {
            Ok(est) => return Ok(est),
            Err(clsna::ClsnaError::Degeneracy(_)) => continue,
            Err(e) => return Err(e.to_string()),
        }
    }
    Err(format!("degenerate variance for {name} at all eta"))
}

fn table1_study(criterion: usize, label: &str, polarized: bool, paper: Table1Row) {
    let hyper_fit = VarianceHyperparams::default();
    let cfg = ModelConfig::default();
    let reps = 20;
    let mut est_sum = [0.0f64; 4];
    let mut var_sum = [0.0f64; 4];
    let mut failures = Vec::new();
    for seed in 1..=reps as u64 {
        let spec = if polarized {
            polarization_spec(100, 10, seed)
        } else {
            flocking_spec(100, 10, seed)
        };
        let (series, _) = simulate(&spec).unwrap();
        let fit = fit_map_staged(&series, 2, 5, &hyper_fit, &cfg, &fit_opts(seed)).unwrap();
        let p = fit.params_hat();
        est_sum[0] += p.alpha;
        est_sum[1] += p.delta;
        est_sum[2] += 0.5 * (p.gamma_w[0] + p.gamma_w[1]);
        est_sum[3] += p.gamma_b;

        let opt_var = OptimizerConfig { max_iters: 1000, ..fit_opts(seed) };
        match ClsnaPerturb::new(&series, &fit, &hyper_fit, &cfg, &opt_var) {
            Ok(ctx) => {
                let mut var_of = |name: &str| -> f64 {
                    match variance_with_ladder(&ctx, name) {
                        Ok(est) => est.variance,
                        Err(e) => {
                            failures.push(format!("seed {seed} {name}: {e}"));
                            f64::NAN
                        }
                    }
                };
                var_sum[0] += var_of("alpha");
                var_sum[1] += var_of("delta");
                var_sum[2] += 0.5 * (var_of("gamma_w1") + var_of("gamma_w2"));
                var_sum[3] += var_of("gamma_b");
            }
            Err(e) => failures.push(format!("seed {seed} baseline: {e}")),
        }
    }
    let means: Vec<f64> = est_sum.iter().map(|s| s / reps as f64).collect();
    let vars: Vec<f64> = var_sum.iter().map(|s| s / reps as f64).collect();
    let mut ok = failures.is_empty();
    let mut detail = String::new();
    for i in 0..4 {
        let mean_ok = (means[i] - paper.means[i]).abs() <= 3.0 * paper.sds[i];
        // The paper's Var-hat column is on the standard-deviation scale:
        // its own text compares it directly against the empirical SDs
        // ("slightly smaller than the true standard deviation"), and each
        // reported value tracks the SD column, not its square. Compare
        // sqrt(mean variance estimate) against it.
        let ratio = vars[i].sqrt() / paper.variances[i];
        let var_ok = ratio.is_finite() && (0.5..=2.0).contains(&ratio);
        ok &= mean_ok && var_ok;
        detail.push_str(&format!(
            "[{i}] mean {:.3} (paper {:.3} sd {:.3}, {}), sd-hat {:.4} (paper {:.4}, ratio {:.2}, {}); ",
            means[i],
            paper.means[i],
            paper.sds[i],
            if mean_ok { "ok" } else { "OUT" },
            vars[i].sqrt(),
            paper.variances[i],
            ratio,
            if var_ok { "ok" } else { "OUT" },
        ));
    }
    if !failures.is_empty() {
        detail.push_str(&format!("failures: {failures:?}"));
    }
    verdict(criterion, label, ok, &detail);
}

#[test]
fn criterion_3_table1_flocking() {
    table1_study(
        3,
        "Table 1 flocking recovery",
        false,
        Table1Row {
            means: [0.817, 1.934, 0.202, 0.489],
            sds: [0.029, 0.023, 0.135, 0.14],
            variances: [0.025, 0.024, 0.125, 0.117],
        },
    );
}

#[test]
fn criterion_4_table1_polarization() {
    table1_study(
        4,
        "Table 1 polarization recovery",
        true,
        Table1Row {
            means: [0.825, 2.868, 0.302, -0.54],
            sds: [0.043, 0.045, 0.041, 0.035],
            variances: [0.038, 0.038, 0.035, 0.03],
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: change-point recovery and null calibration
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_changepoint_recovery() {
    let hyper = VarianceHyperparams::default();
    let cfg = ModelConfig::default();
    let n = 60;
    let t_len = 10;
    let true_cp = 6;
    let candidates: Vec<usize> = (2..=t_len - 1).collect();
    let seeds = 20u64;

    let mut hits = 0;
    let mut null_ok = 0;
    for seed in 1..=seeds {
        let spec = flocking_spec(n, t_len, seed);
        let scan_opt = OptimizerConfig { max_iters: 800, ..fit_opts(seed) };

        // Change at t* = 6: the between-group attraction flips sign.
        let post = GlobalParams { gamma_b: -spec.params.gamma_b, ..spec.params };
        let (series, _) = simulate_piecewise(&spec, post, true_cp).unwrap();
        let warm = fit_map_staged(&series, 2, 5, &hyper, &cfg, &fit_opts(seed)).unwrap();
        let scan =
            changepoint_scan(&series, &candidates, false, 2, &warm, &hyper, &cfg, &scan_opt)
                .unwrap();
        if scan.best == Some(true_cp) {
            hits += 1;
        }

        // Stationary null: no candidate may beat the un-segmented BIC by
        // more than log(N_obs).
        let (null_series, _) = simulate(&flocking_spec(n, t_len, seed + 1000)).unwrap();
        let null_warm =
            fit_map_staged(&null_series, 2, 5, &hyper, &cfg, &fit_opts(seed + 1000)).unwrap();
        let null_scan = changepoint_scan(
            &null_series,
            &candidates,
            false,
            2,
            &null_warm,
            &hyper,
            &cfg,
            &scan_opt,
        )
        .unwrap();
        let margin = (null_series.total_dyads() as f64).ln();
        let best_bic = null_scan.rows.iter().filter_map(|r| r.bic).fold(f64::INFINITY, f64::min);
        if best_bic >= null_scan.unsegmented_bic - margin {
            null_ok += 1;
        }
    }
    verdict(
        5,
        "change-point recovery",
        hits >= 16 && null_ok >= 16,
        &format!("argmin hits {hits}/20 (need >=16), null calibrated {null_ok}/20 (need >=16)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: diagnostics exactness on a Gaussian oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_diagnostics_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let g = Gauss::random(&mut rng, 4);
    let init: Vec<f64> = g.mean.iter().map(|m| m + 0.2).collect();
    let sigma = g.cov[(1, 1)].sqrt();
    let grid: Vec<f64> = [-1.5, -1.0, -0.5, 0.5, 1.0, 1.5].iter().map(|s| s * sigma).collect();

    let mut target = DensityTarget::new(&g, &init, 1).unwrap();
    let normality = diagnostic_normality(&mut target, &grid).unwrap();
    let r2_err = (normality.r_squared - 1.0).abs();

    let mut target = DensityTarget::new(&g, &init, 1).unwrap();
    let linearity = diagnostic_linearity(&mut target, &grid).unwrap();
    let slope_spread = linearity
        .rows
        .iter()
        .map(|r| (r.max_slope - r.min_slope) / r.mean_slope.abs().max(1.0))
        .fold(0.0f64, f64::max);

    verdict(
        6,
        "diagnostics exactness",
        r2_err <= 1e-10 && slope_spread <= 1e-10,
        &format!("|R^2 - 1| = {r2_err:.3e}, max slope spread {slope_spread:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: posterior invariance under orthogonal transforms
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_orthogonal_invariance() {
    let hyper = VarianceHyperparams::default();
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut max_rel = 0.0f64;
    let mut max_residual = 0.0f64;
    for _ in 0..10 {
        let (series, traj) = random_fixture(&mut rng, 5, 3);
        let layout = ParamLayout::unsegmented(series.t_len());
        let flat = random_params(&mut rng);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let reflect = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let (c, s) = (theta.cos(), theta.sin());
        // Rotation composed with an optional reflection: orthogonal.
        let q = [[c, -s * reflect], [s, c * reflect]];
        let mut rotated = traj.clone();
        for t0 in 0..series.t_len() {
            let z = rotated.slice_mut(t0);
            for i in 0..z.len() / 2 {
                let (x, y) = (z[2 * i], z[2 * i + 1]);
                z[2 * i] = q[0][0] * x + q[0][1] * y;
                z[2 * i + 1] = q[1][0] * x + q[1][1] * y;
            }
        }
        let lp = log_posterior_flat(&series, &traj, &layout, &flat, &hyper, &cfg).unwrap();
        let lp_rot =
            log_posterior_flat(&series, &rotated, &layout, &flat, &hyper, &cfg).unwrap();
        max_rel = max_rel.max((lp - lp_rot).abs() / lp.abs());
        // Fit comparisons run through Procrustes: the rotated copy aligns
        // back onto the original with negligible residual.
        let (_, _, residual) = procrustes_align(&rotated, &traj).unwrap();
        max_residual = max_residual.max(residual);
    }
    verdict(
        7,
        "posterior orthogonal invariance",
        max_rel <= 1e-10 && max_residual <= 1e-10,
        &format!("max relative drift {max_rel:.3e}, max alignment residual {max_residual:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: brute-force posterior oracle
// ---------------------------------------------------------------------------

/// Term-by-term log posterior computed from first principles: scalar
/// Gaussian log-densities and Bernoulli terms assembled with direct loops
/// over the raw presence/edge data, independent of the crate's factor
/// bookkeeping.
fn oracle_log_posterior(
    series: &NetworkSeries,
    traj: &LatentTrajectory,
    flat: &[f64; 5],
    hyper: &VarianceHyperparams,
) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let ln_gauss = |x: f64, mu: f64, var: f64| {
        -0.5 * (ln2pi + var.ln()) - (x - mu) * (x - mu) / (2.0 * var)
    };
    let p = traj.dim();
    let n = series.node_count();
    let t_len = series.t_len();

    // Dense views: position and presence by (time, global id).
    let pos = |t0: usize, g: usize| -> Option<&[f64]> {
        series.snapshot(t0).local_of_global(g).map(|l| traj.pos(t0, l))
    };
    let present = |t0: usize, g: usize| series.snapshot(t0).local_of_global(g).is_some();
    let edge = |t0: usize, a: usize, b: usize| -> bool {
        let snap = series.snapshot(t0);
        match (snap.local_of_global(a), snap.local_of_global(b)) {
            (Some(la), Some(lb)) => snap.is_edge(la, lb),
            _ => false,
        }
    };

    let mut total = 0.0;
    // Global-parameter priors.
    for i in 0..5 {
        total += ln_gauss(flat[i], hyper.prior_mean[i], hyper.prior_var[i]);
    }
    let (alpha, delta) = (flat[0], flat[1]);
    let gamma_w = [flat[2], flat[3]];
    let gamma_b = flat[4];

    // Latent factors.
    for g in 0..n {
        let group = series.group_of(g);
        for t0 in 0..t_len {
            let Some(z) = pos(t0, g) else { continue };
            if t0 == 0 {
                for k in 0..p {
                    total += ln_gauss(z[k], 0.0, hyper.tau2);
                }
            } else if present(t0 - 1, g) {
                let zp = pos(t0 - 1, g).unwrap();
                // Attractors from the previous slice: mean neighbor
                // position minus own, per group, zero for empty sets.
                let mut a_w = vec![0.0; p];
                let mut a_b = vec![0.0; p];
                let (mut n_w, mut n_b) = (0usize, 0usize);
                for h in 0..n {
                    if h == g || !present(t0 - 1, h) || !edge(t0 - 1, g, h) {
                        continue;
                    }
                    let zh = pos(t0 - 1, h).unwrap();
                    let (acc, cnt) = if series.group_of(h) == group {
                        (&mut a_w, &mut n_w)
                    } else {
                        (&mut a_b, &mut n_b)
                    };
                    for k in 0..p {
                        acc[k] += zh[k];
                    }
                    *cnt += 1;
                }
                for k in 0..p {
                    let aw = if n_w > 0 { a_w[k] / n_w as f64 - zp[k] } else { 0.0 };
                    let ab = if n_b > 0 { a_b[k] / n_b as f64 - zp[k] } else { 0.0 };
                    let mu = zp[k] + gamma_w[group.index()] * aw + gamma_b * ab;
                    total += ln_gauss(z[k], mu, hyper.sigma2);
                }
            } else {
                // Entering node: group mean at the previous time.
                let mut mean = vec![0.0; p];
                let mut count = 0usize;
                for h in 0..n {
                    if series.group_of(h) == group && present(t0 - 1, h) {
                        let zh = pos(t0 - 1, h).unwrap();
                        for k in 0..p {
                            mean[k] += zh[k];
                        }
                        count += 1;
                    }
                }
                for k in 0..p {
                    let mu = if count > 0 { mean[k] / count as f64 } else { 0.0 };
                    total += ln_gauss(z[k], mu, hyper.phi2);
                }
            }
        }
    }

    // Edge factors: every unordered present dyad at every time.
    for t0 in 0..t_len {
        for a in 0..n {
            for b in (a + 1)..n {
                if !present(t0, a) || !present(t0, b) {
                    continue;
                }
                let (za, zb) = (pos(t0, a).unwrap(), pos(t0, b).unwrap());
                let dist: f64 =
                    za.iter().zip(zb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let mut logit = alpha - dist;
                // Persistence applies iff both endpoints were present at
                // t-1 (the BothPresentPrev rule).
                if t0 > 0 && present(t0 - 1, a) && present(t0 - 1, b) {
                    logit += delta * if edge(t0 - 1, a, b) { 1.0 } else { 0.0 };
                }
                let y = edge(t0, a, b);
                // log Bernoulli(y | logistic(logit)) via log(1 + e^x).
                let log1pexp = if logit > 30.0 { logit } else { logit.exp().ln_1p() };
                total += if y { logit - log1pexp } else { -log1pexp };
            }
        }
    }
    total
}

#[test]
fn criterion_8_brute_force_posterior() {
    let hyper = VarianceHyperparams::default();
    let cfg = ModelConfig { delta_rule: DeltaRule::BothPresentPrev };
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut max_abs = 0.0f64;

    // Hand-built churn fixture: entry, exit, and re-entry in 3 times.
    let churn = NetworkSeries::new(
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
                present: vec!["a".into(), "c".into(), "d".into()],
                edges: vec![("a".into(), "c".into()), ("c".into(), "d".into())],
            },
            TimeSlice {
                present: vec!["a".into(), "b".into(), "d".into()],
                edges: vec![("a".into(), "d".into())],
            },
        ],
    )
    .unwrap();
    let mut fixtures: Vec<(NetworkSeries, LatentTrajectory)> = Vec::new();
    let mut traj = LatentTrajectory::zeros(&churn, 2);
    for t0 in 0..churn.t_len() {
        for x in traj.slice_mut(t0) {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    fixtures.push((churn, traj));
    for _ in 0..12 {
        let n = rng.gen_range(2..=4);
        let t_len = rng.gen_range(1..=3);
        fixtures.push(random_fixture(&mut rng, n, t_len));
    }

    for (series, traj) in &fixtures {
        let layout = ParamLayout::unsegmented(series.t_len());
        let flat = random_params(&mut rng);
        let lib = log_posterior_flat(series, traj, &layout, &flat, &hyper, &cfg).unwrap();
        let oracle = oracle_log_posterior(series, traj, &flat, &hyper);
        max_abs = max_abs.max((lib - oracle).abs());
    }
    verdict(
        8,
        "brute-force posterior oracle",
        max_abs <= 1e-12,
        &format!("max absolute difference {max_abs:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: end-to-end CLI reproducibility
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_cli_reproducibility() {
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_clsna");
    let run_pipeline = |root: &std::path::Path| {
        let sim = root.join("sim");
        let run = |args: &[&str]| {
            let status = Command::new(bin)
                .args(args)
                .env("CLSNA_VARIANCE_ETA", "0.5")
                .status()
                .expect("spawn clsna");
            assert!(status.success(), "clsna {args:?} failed");
        };
        run(&[
            "simulate", "--design", "flocking", "--n", "20", "--t-len", "4", "--seed", "3",
            "--deterministic", "--out", sim.to_str().unwrap(),
        ]);
        let edges = sim.join("edges.csv");
        let nodes = sim.join("nodes.csv");
        for sub in ["fit", "variance", "scan"] {
            run(&[
                sub,
                "--edges",
                edges.to_str().unwrap(),
                "--nodes",
                nodes.to_str().unwrap(),
                "--seed",
                "3",
                "--deterministic",
                "--out",
                root.join(sub).to_str().unwrap(),
            ]);
        }
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_pipeline(dir_a.path());
    run_pipeline(dir_b.path());

    let mut files = Vec::new();
    fn walk(dir: &std::path::Path, base: &std::path::Path, out: &mut Vec<std::path::PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, base, out);
            } else {
                out.push(path.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    walk(dir_a.path(), dir_a.path(), &mut files);
    files.sort();
    assert!(!files.is_empty());
    let mut mismatches = Vec::new();
    for rel in &files {
        let a = std::fs::read(dir_a.path().join(rel)).unwrap();
        let b = std::fs::read(dir_b.path().join(rel)).ok();
        if b.as_deref() != Some(a.as_slice()) {
            mismatches.push(rel.clone());
        }
    }
    verdict(
        9,
        "CLI reproducibility",
        mismatches.is_empty(),
        &format!("{} files compared, differing: {mismatches:?}", files.len()),
    );
}
