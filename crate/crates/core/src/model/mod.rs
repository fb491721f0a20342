//! The GMCAR-MM / MCAR-MM negative binomial model.

mod car;
mod covariates;
mod data;
mod gradient;
pub mod negbin;
mod posterior;
mod spec;

pub use car::{car_logdensity, gmcar_logdensity, mcar_logdensity, CrossPrecision, GmcarParams};
pub use covariates::{preprocess_covariates, recover_beta, CovariatePreprocess};
pub use data::{compute_offsets, Dataset};
pub use negbin::{negbin_logpmf, sample_negbin};
pub use posterior::{linear_predictors, log_posterior, LinearPredictors, Model};
pub use spec::{AlphaConstraint, Hyperpriors, ModelSpec, ParameterState, PriorKind};
