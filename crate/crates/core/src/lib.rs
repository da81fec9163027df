//! Bayesian mixture cure survival models with penalized B-splines and Laplace approximations.
//!
//! A P-spline log-baseline hazard, a logistic incidence and a Cox latency are
//! combined in a latent Gaussian model. The conditional posterior of the latent
//! vector is approximated by Newton-Raphson (Laplace), the log penalty is chosen
//! by a bracketing walk over its approximate posterior, and credible intervals
//! follow from the delta method. The crate also ships the data-generating
//! scenarios and metric stack of a replication study, a Kaplan-Meier estimator
//! and CSV/JSON plumbing used by the `lpsmc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod intervals;
pub mod laplace;
pub mod model;
pub mod simulation;
pub mod spline;

pub use error::{LpsmcError, Result};
pub use intervals::{
    ci_baseline_survival, ci_incidence, ci_latency_survival, ci_latent, survival_quantile, CredibleInterval,
    IncidenceTarget, IntervalEngine, QuantileProfile, SurvivalQuantile, Transform,
};
pub use laplace::{
    bracket_mode, fit, laplace_approx, log_posterior_v, prior_precision, BracketOutcome, ConditionalPosterior,
    FitOptions, FitResult, Hyperparameters, LatentPrior, LogLikelihood, QuadraticLikelihood,
};
pub use model::{
    baseline_survival, incidence, latency_survival, population_survival, BinGrid, LatentLayout, LatentVector,
    MixtureCureModel, OmegaCache, SplineHazard, SurvivalDataset,
};
pub use simulation::{
    coverage_survival, generate_dataset, run_study, ScenarioConfig, SimulatedDataset, StudySummary,
};
pub use spline::{basis_matrix, bspline_eval, difference_matrix, penalty_matrix, KnotGrid, PenaltyMatrix};
