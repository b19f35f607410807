//! Bayesian learning of nonlinear state space models whose transition (and
//! optionally observation) functions carry Gaussian process priors.
//!
//! The Gaussian process is projected onto a truncated Laplace-operator
//! eigenbasis of a rectangular domain, turning the state space model into a
//! linear-in-parameters form with a diagonal prior precision given by the
//! kernel's spectral density. Learning runs a blocked Gibbs sampler: a
//! conditional particle filter with ancestor sampling draws the state
//! trajectory, matrix-normal inverse-Wishart conjugacy draws the weights
//! and process noise exactly, and a Metropolis-within-Gibbs step moves the
//! kernel hyperparameters.
//!
//! Modules:
//! * [`basis`] — eigenbasis, spectral densities, reduced-rank covariance;
//! * [`dists`] — matrix-normal and inverse-Wishart densities and samplers;
//! * [`model`] — the state space model, simulation, and densities;
//! * [`smc`] — particle filtering and the particle Gibbs kernel;
//! * [`gibbs`] — sufficient statistics, conjugate updates, the full sampler,
//!   and chain persistence;
//! * [`evaluate`] — posterior predictions, forecasting, and metrics.
//!
//! Data-parallel inner loops run on rayon when the `parallel` feature
//! (default) is enabled and the caller requests it; per-item counter-based
//! random substreams keep results bit-identical in both execution modes.

pub mod basis;
pub mod dists;
pub mod evaluate;
pub mod gibbs;
pub mod model;
mod par;
pub mod rng;
pub mod smc;

pub use basis::{BasisConfig, BasisError, BasisIndex, Domain, KernelFamily, KernelSpec};
pub use dists::{iw_logpdf, ln_mv_gamma, mn_logpdf, sample_iw, sample_mn, DistError};
pub use evaluate::{
    forecast_k_step, mean_loglik, posterior_predictive, rmse, transition_profile, EvalError,
    MetricsReport, PredictInput, PredictiveSummary,
};
pub use gibbs::{
    mh_hyperparameter_step, run_gibbs, sample_observation_model, sample_weights_posterior,
    sample_noise_posterior, sufficient_statistics, GibbsChain, GibbsDiagnostics, GibbsError,
    GibbsRecord, GibbsSettings, ModelStructure, SufficientStats,
};
pub use model::{
    Features, Gaussian, GpSsm, Measurement, ModelError, PriorSpec, ThetaPrior, Trajectory,
};
pub use smc::{bootstrap_filter, pgas_kernel, systematic_resample, ParticleSystem, SmcError};
