//! Coevolving latent space network models with attractors (CLSNA), extended
//! to node entry and exit.
//!
//! The crate provides:
//! - the model itself: latent trajectories, attractor dynamics, edge
//!   probabilities and the full log posterior ([`model`], [`posterior`]);
//! - closed-form gradients with subsampling support ([`gradients`]);
//! - SGD-based MAP estimation with momentum, sign-gradient warmup and
//!   staged higher-dimension-then-PCA initialization ([`optimizer`]);
//! - perturbation-based posterior variance and covariance estimation with
//!   quadratic-approximation diagnostics ([`uncertainty`]);
//! - a generative simulator including node churn ([`simulator`]);
//! - change-point fitting and BIC model selection ([`selection`]);
//! - file ingestion, configuration and artifact export for the `clsna`
//!   command-line tool ([`io`]).

pub mod error;
pub mod gradients;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod params;
pub mod posterior;
pub mod selection;
pub mod simulator;
pub mod uncertainty;

pub use error::{ClsnaError, Result};
pub use model::{
    AttractorPair, DeltaRule, GlobalParams, Group, LatentTrajectory, ModelConfig, NetworkSeries,
    TimeSlice, VarianceHyperparams,
};
pub use params::{ParamLayout, ParamRole};
