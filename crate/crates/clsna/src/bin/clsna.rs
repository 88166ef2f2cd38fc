//! Command-line front end: simulate, fit, variance, scan, diagnose.
//!
//! Every subcommand reads an optional JSON run configuration (`--config`),
//! applies `CLSNA_*` environment overrides, and writes its artifacts into
//! `--out`. Errors produce a machine-readable `error.json` in the output
//! directory and a nonzero exit code: 2 input, 3 numeric, 4 non-convergence.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use clsna::io::{
    ingest, read_time_labels, write_density_csv, write_group_means_csv, write_network,
    write_positions_csv, FitSummary, RunConfig,
};
use clsna::optimizer::{fit_map_staged, write_trace_csv, FitResult};
use clsna::selection::{changepoint_scan, write_scan_csv};
use clsna::simulator::{
    flocking_spec, polarization_spec, simulate, simulate_piecewise, ChurnSchedule, ScenarioSpec,
};
use clsna::uncertainty::{
    default_eta, diagnostic_linearity, diagnostic_normality, estimate_report,
    estimate_variance_combo, write_linearity_csv, write_normality_csv, ClsnaPerturb,
};
use clsna::{ClsnaError, GlobalParams, NetworkSeries, Result};

#[derive(Parser)]
#[command(
    name = "clsna",
    about = "Coevolving latent space network models with attractors",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force deterministic reduction (full-batch gradients); with a fixed
    /// seed, repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Optional time,label CSV mapping time steps to display labels.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Edge list CSV (time,node_a,node_b).
    #[arg(long)]
    edges: PathBuf,
    /// Node CSV (node,group,time or node,group,first_time,last_time).
    #[arg(long)]
    nodes: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// MAP-fit a network series and export estimates and trajectories.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Generate a synthetic series from a named design.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario preset: "flocking" or "polarization".
        #[arg(long)]
        design: String,
        /// Number of nodes.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Number of time steps.
        #[arg(long, default_value_t = 10)]
        t_len: usize,
        /// Per-step entry probability for absent nodes.
        #[arg(long, default_value_t = 0.0)]
        churn_entry: f64,
        /// Per-step exit probability for present nodes.
        #[arg(long, default_value_t = 0.0)]
        churn_exit: f64,
        /// Switch to post-change parameters from this (1-based) time on.
        #[arg(long)]
        changepoint: Option<usize>,
        /// Post-change within-group attractor coefficient (both groups).
        #[arg(long)]
        post_gamma_w: Option<f64>,
        /// Post-change between-group attractor coefficient.
        #[arg(long)]
        post_gamma_b: Option<f64>,
    },
    /// Fit, then estimate posterior variances by perturbation.
    Variance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit, then scan candidate change-points and rank them by BIC.
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit, then run the quadratic-approximation diagnostics.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn main() {
    let cli = Cli::parse();
    let out_dir = match &cli.cmd {
        Cmd::Fit { common, .. }
        | Cmd::Simulate { common, .. }
        | Cmd::Variance { common, .. }
        | Cmd::Scan { common, .. }
        | Cmd::Diagnose { common, .. } => common.out.clone(),
    };
    if let Err(e) = run(cli) {
        let code = e.exit_code();
        eprintln!("error: {e}");
        let doc = serde_json::json!({
            "error": error_kind(&e),
            "message": e.to_string(),
            "exit_code": code,
        });
        if std::fs::create_dir_all(&out_dir).is_ok() {
            let _ = std::fs::write(
                out_dir.join("error.json"),
                serde_json::to_string_pretty(&doc).unwrap_or_default(),
            );
        }
        std::process::exit(code);
    }
}

fn error_kind(e: &ClsnaError) -> &'static str {
    match e {
        ClsnaError::Input(_) => "input",
        ClsnaError::Numeric(_) => "numeric",
        ClsnaError::NonConvergence(_) => "non_convergence",
        ClsnaError::Degeneracy(_) => "degeneracy",
        ClsnaError::Io(_) => "io",
        ClsnaError::Json(_) => "json",
        ClsnaError::Csv(_) => "csv",
    }
}

/// Loads the configuration and applies the common flag overrides.
fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), std::env::vars())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.optimizer.seed = seed;
    } else {
        cfg.optimizer.seed = cfg.seed;
    }
    if common.deterministic {
        cfg.optimizer.batch_fraction = 1.0;
    }
    Ok(cfg)
}

fn load_labels(common: &Common, t_len: usize) -> Result<Option<Vec<String>>> {
    match &common.labels {
        Some(p) => {
            let f = File::open(p).map_err(|e| {
                ClsnaError::input(format!("cannot open labels {}: {e}", p.display()))
            })?;
            Ok(Some(read_time_labels(f, t_len)?))
        }
        None => Ok(None),
    }
}

fn load_series(data: &DataArgs) -> Result<NetworkSeries> {
    let report = ingest(&data.edges, &data.nodes)?;
    if report.duplicate_edge_rows > 0 {
        eprintln!(
            "warning: dropped {} duplicate edge row(s)",
            report.duplicate_edge_rows
        );
    }
    Ok(report.series)
}

fn create(out_dir: &Path, name: &str) -> Result<File> {
    std::fs::create_dir_all(out_dir)?;
    Ok(File::create(out_dir.join(name))?)
}

fn write_json<T: serde::Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(out_dir.join(name), text + "\n")?;
    Ok(())
}

fn fit_series(series: &NetworkSeries, cfg: &RunConfig) -> Result<FitResult> {
    fit_map_staged(
        series,
        cfg.p_target,
        cfg.q_over,
        &cfg.hyper,
        &cfg.model,
        &cfg.optimizer,
    )
}

/// Shared fit artifacts: estimates, trajectories, group means, densities,
/// optimizer trace.
fn export_fit(
    out_dir: &Path,
    series: &NetworkSeries,
    fit: &FitResult,
    labels: Option<&[String]>,
) -> Result<()> {
    write_json(out_dir, "params.json", &FitSummary::from_fit(fit))?;
    write_positions_csv(series, &fit.latent_hat, labels, create(out_dir, "positions.csv")?)?;
    write_group_means_csv(series, &fit.latent_hat, labels, create(out_dir, "group_means.csv")?)?;
    write_density_csv(series, labels, create(out_dir, "density.csv")?)?;
    write_trace_csv(&fit.trace, create(out_dir, "trace.csv")?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Fit { common, data } => {
            let cfg = load_config(&common)?;
            let series = load_series(&data)?;
            let labels = load_labels(&common, series.t_len())?;
            let fit = fit_series(&series, &cfg)?;
            export_fit(&common.out, &series, &fit, labels.as_deref())
        }

        Cmd::Simulate {
            common,
            design,
            n,
            t_len,
            churn_entry,
            churn_exit,
            changepoint,
            post_gamma_w,
            post_gamma_b,
        } => {
            let cfg = load_config(&common)?;
            let mut spec: ScenarioSpec = match design.as_str() {
                "flocking" => flocking_spec(n, t_len, cfg.seed),
                "polarization" => polarization_spec(n, t_len, cfg.seed),
                other => {
                    return Err(ClsnaError::input(format!(
                        "unknown design '{other}' (expected flocking or polarization)"
                    )))
                }
            };
            if churn_entry > 0.0 || churn_exit > 0.0 {
                spec.churn = ChurnSchedule::Random { entry: churn_entry, exit: churn_exit };
            }
            let (series, traj, params_post) = match changepoint {
                Some(cp) => {
                    let post = GlobalParams {
                        gamma_w: [
                            post_gamma_w.unwrap_or(spec.params.gamma_w[0]),
                            post_gamma_w.unwrap_or(spec.params.gamma_w[1]),
                        ],
                        gamma_b: post_gamma_b.unwrap_or(spec.params.gamma_b),
                        ..spec.params
                    };
                    let (s, z) = simulate_piecewise(&spec, post, cp)?;
                    (s, z, Some(post))
                }
                None => {
                    let (s, z) = simulate(&spec)?;
                    (s, z, None)
                }
            };
            let labels = load_labels(&common, series.t_len())?;
            write_network(
                &series,
                create(&common.out, "edges.csv")?,
                create(&common.out, "nodes.csv")?,
            )?;
            write_positions_csv(
                &series,
                &traj,
                labels.as_deref(),
                create(&common.out, "positions_true.csv")?,
            )?;
            write_density_csv(&series, labels.as_deref(), create(&common.out, "density.csv")?)?;
            write_json(
                &common.out,
                "truth.json",
                &serde_json::json!({
                    "design": design,
                    "n": n,
                    "t_len": t_len,
                    "seed": spec.seed,
                    "params": spec.params,
                    "params_post": params_post,
                    "changepoint": changepoint,
                    "tau2": spec.hyper.tau2,
                    "sigma2": spec.hyper.sigma2,
                    "phi2": spec.hyper.phi2,
                    "churn_entry": churn_entry,
                    "churn_exit": churn_exit,
                }),
            )
        }

        Cmd::Variance { common, data } => {
            let cfg = load_config(&common)?;
            let series = load_series(&data)?;
            let labels = load_labels(&common, series.t_len())?;
            let fit = fit_series(&series, &cfg)?;
            export_fit(&common.out, &series, &fit, labels.as_deref())?;
            let etas: BTreeMap<String, f64> = match cfg.variance.eta {
                Some(eta) => fit.layout.names().into_iter().map(|n| (n, eta)).collect(),
                None => BTreeMap::new(),
            };
            let report = estimate_report(
                &series,
                &fit,
                &cfg.variance.targets,
                &etas,
                &cfg.hyper,
                &cfg.model,
                &cfg.optimizer,
            )?;
            let mut combo_rows = Vec::new();
            for [a, b] in &cfg.variance.combos {
                let var = estimate_variance_combo(
                    &series,
                    &fit,
                    &[(a.clone(), 1.0), (b.clone(), -1.0)],
                    &etas,
                    &cfg.hyper,
                    &cfg.model,
                    &cfg.optimizer,
                )?;
                combo_rows.push(serde_json::json!({
                    "difference": format!("{a} - {b}"),
                    "variance": var,
                }));
            }
            write_json(
                &common.out,
                "variance.json",
                &serde_json::json!({ "report": report, "combos": combo_rows }),
            )
        }

        Cmd::Scan { common, data } => {
            let cfg = load_config(&common)?;
            let series = load_series(&data)?;
            let labels = load_labels(&common, series.t_len())?;
            let fit = fit_series(&series, &cfg)?;
            export_fit(&common.out, &series, &fit, labels.as_deref())?;
            let candidates = cfg.candidates(series.t_len())?;
            let scan = changepoint_scan(
                &series,
                &candidates,
                cfg.selection.split_baseline,
                cfg.p_target,
                &fit,
                &cfg.hyper,
                &cfg.model,
                &cfg.optimizer,
            )?;
            write_scan_csv(&scan, create(&common.out, "scan.csv")?)?;
            write_json(&common.out, "scan.json", &scan)
        }

        Cmd::Diagnose { common, data } => {
            let cfg = load_config(&common)?;
            let series = load_series(&data)?;
            let labels = load_labels(&common, series.t_len())?;
            let fit = fit_series(&series, &cfg)?;
            export_fit(&common.out, &series, &fit, labels.as_deref())?;
            let ctx = ClsnaPerturb::new(&series, &fit, &cfg.hyper, &cfg.model, &cfg.optimizer)?;
            let names: Vec<String> = if cfg.variance.targets.is_empty() {
                fit.layout.names()
            } else {
                cfg.variance.targets.clone()
            };
            let mut summary = BTreeMap::new();
            for name in &names {
                let idx = fit.layout.index_of_name(name)?;
                let base = cfg
                    .variance
                    .eta
                    .unwrap_or_else(|| default_eta(ctx.baseline().flat[idx]));
                let grid: Vec<f64> =
                    [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0].iter().map(|m| m * base).collect();
                let mut target = ctx.target(name)?;
                // A degenerate curvature on one parameter is itself a
                // diagnostic outcome; record it and keep going.
                let entry = match (
                    diagnostic_normality(&mut target, &grid),
                    diagnostic_linearity(&mut target, &grid),
                ) {
                    (Ok(normality), Ok(linearity)) => {
                        write_normality_csv(
                            &normality,
                            create(&common.out, &format!("normality_{name}.csv"))?,
                        )?;
                        write_linearity_csv(
                            &linearity,
                            create(&common.out, &format!("linearity_{name}.csv"))?,
                        )?;
                        serde_json::json!({
                            "r_squared": normality.r_squared,
                            "trimmed_mean_slope_spread": linearity.trimmed_mean_spread,
                            "trimmed_max_slope_spread": linearity.trimmed_max_spread,
                            "eta_grid": grid,
                        })
                    }
                    (Err(e), _) | (_, Err(e)) => serde_json::json!({
                        "error": e.to_string(),
                        "eta_grid": grid,
                    }),
                };
                summary.insert(name.clone(), entry);
            }
            write_json(&common.out, "diagnostics.json", &summary)
        }
    }
}
