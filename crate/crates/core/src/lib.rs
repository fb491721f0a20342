//! Bivariate spatially misaligned disease mapping.
//!
//! Two count outcomes are modelled with negative binomial likelihoods: one
//! observed on an areal lattice, the other on membership units (for example
//! GP practices) that draw their populations from many areas. Spatial effects
//! follow a GMCAR or MCAR prior on the lattice and reach membership units
//! through row-stochastic multiple-membership weights. Inference is by HMC.

pub mod cluster;
pub mod compare;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod io;
pub mod membership;
pub mod model;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
pub use graph::{build_graph, car_logdet, SpatialGraph};
pub use membership::{build_membership, mm_project, MembershipMatrix};
pub use model::{
    compute_offsets, gmcar_logdensity, linear_predictors, log_posterior, mcar_logdensity,
    negbin_logpmf, preprocess_covariates, recover_beta, AlphaConstraint, CovariatePreprocess,
    Dataset, GmcarParams, Hyperpriors, LinearPredictors, Model, ModelSpec, ParameterState,
    PriorKind,
};
pub use sampler::{hmc_fit, FitConfig, PosteriorSamples};
pub use diagnostics::{ess_bulk, split_rhat, summarize, DiagnosticsReport};
pub use compare::{dic, elpd_diff_se, fit_report, loo_elpd, saturated_deviance, tail_proportions, tap, FitReport, Outcome, TailSmoothing};
pub use cluster::{bivariate_classify, classify, cluster_report, exceedance_prob, locality_risk, BivariateLabel, Category, ClusterReport};
pub use simulate::{generate_dataset, make_lattice, make_membership, sample_gmcar, sample_gmrf, simulate_study, StudyDesign, TruthSpec};
