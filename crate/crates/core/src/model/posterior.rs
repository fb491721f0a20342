//! Joint log-posterior of the bivariate CAR multiple-membership model.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use super::car::{gmcar_logdensity, mcar_logdensity, GmcarParams};
use super::covariates::{preprocess_covariates, CovariatePreprocess};
use super::data::Dataset;
use super::negbin::{logpmf, MU_FLOOR};
use super::spec::{ModelSpec, ParameterState, PriorKind};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::membership::MembershipMatrix;
use crate::sampler::transform::Parameterization;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Areal log relative risks and their membership projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictors {
    /// `log ρ₁ = ζ₁`, per area.
    pub log_rho1: Vec<f64>,
    /// `ζ₂ = γ₂ + xβ₂ + φ₂`, per area.
    pub zeta2: Vec<f64>,
    /// `log ρ₂ = H ζ₂`, per membership.
    pub log_rho2: Vec<f64>,
}

pub fn linear_predictors(
    state: &ParameterState,
    graph: &SpatialGraph,
    h: &MembershipMatrix,
    design: Option<&DMatrix<f64>>,
) -> Result<LinearPredictors> {
    let n = graph.n();
    if h.n() != n || state.phi1_unit.len() != n || state.phi2_unit.len() != n {
        return Err(Error::DimensionMismatch(
            "state, graph and membership disagree on the number of areas".into(),
        ));
    }
    let p = design.map_or(0, DMatrix::ncols);
    if state.beta1.len() != p || state.beta2.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vectors must have length {p}"
        )));
    }
    if let Some(x) = design {
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, expected {n}",
                x.nrows()
            )));
        }
    }

    let (phi1, phi2) = state.spatial_effects(graph);
    let fixed = |gamma: f64, beta: &[f64], i: usize| -> f64 {
        let mut v = gamma;
        if let Some(x) = design {
            for (k, b) in beta.iter().enumerate() {
                v += x[(i, k)] * b;
            }
        }
        v
    };
    let log_rho1: Vec<f64> = (0..n)
        .map(|i| fixed(state.gamma1, &state.beta1, i) + phi1[i])
        .collect();
    let zeta2: Vec<f64> = (0..n)
        .map(|i| fixed(state.gamma2, &state.beta2, i) + phi2[i])
        .collect();
    let log_rho2 = h.project_unchecked(&zeta2);
    Ok(LinearPredictors {
        log_rho1,
        zeta2,
        log_rho2,
    })
}

pub(crate) fn normal_lpdf(x: f64, sd: f64) -> f64 {
    -HALF_LN_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

pub(crate) fn half_normal_lpdf(x: f64, sd: f64) -> f64 {
    std::f64::consts::LN_2 + normal_lpdf(x, sd)
}

pub(crate) fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Fixed inputs of a fit: data, prior choice, lattice and membership weights.
#[derive(Debug, Clone)]
pub struct Model {
    data: Dataset,
    spec: ModelSpec,
    graph: SpatialGraph,
    membership: MembershipMatrix,
    covariates: Option<CovariatePreprocess>,
    parameterization: Parameterization,
}

impl Model {
    pub fn new(
        data: Dataset,
        spec: ModelSpec,
        graph: SpatialGraph,
        membership: MembershipMatrix,
    ) -> Result<Self> {
        spec.validate()?;
        if membership.n() != graph.n() {
            return Err(Error::DimensionMismatch(format!(
                "membership matrix has {} areas, graph has {}",
                membership.n(),
                graph.n()
            )));
        }
        data.validate(graph.n(), membership.m())?;
        let covariates = if spec.use_covariates {
            let x = data.x.as_ref().ok_or_else(|| {
                Error::InvalidConfig("covariates requested but the dataset has none".into())
            })?;
            Some(preprocess_covariates(x)?)
        } else {
            None
        };
        let p = covariates.as_ref().map_or(0, CovariatePreprocess::p);
        let parameterization = Parameterization::new(&spec, &graph, p);
        Ok(Self {
            data,
            spec,
            graph,
            membership,
            covariates,
            parameterization,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn membership(&self) -> &MembershipMatrix {
        &self.membership
    }

    pub fn covariates(&self) -> Option<&CovariatePreprocess> {
        self.covariates.as_ref()
    }

    pub fn parameterization(&self) -> &Parameterization {
        &self.parameterization
    }

    /// Number of coefficients per outcome.
    pub fn p(&self) -> usize {
        self.covariates.as_ref().map_or(0, CovariatePreprocess::p)
    }

    /// The design the state coefficients act on (`Q*`), if covariates are used.
    pub fn design(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref().map(|c| &c.q_star)
    }

    pub fn linear_predictors(&self, state: &ParameterState) -> Result<LinearPredictors> {
        linear_predictors(state, &self.graph, &self.membership, self.design())
    }

    /// Per-observation log-likelihood: `n` areal terms then `m` membership terms.
    pub fn pointwise_loglik(&self, state: &ParameterState) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let lp = self.linear_predictors(state)?;
        Ok(self.pointwise_from_predictors(&lp, state.psi1, state.psi2))
    }

    pub(crate) fn pointwise_from_predictors(
        &self,
        lp: &LinearPredictors,
        psi1: f64,
        psi2: f64,
    ) -> Vec<f64> {
        let d = &self.data;
        let areal = lp
            .log_rho1
            .iter()
            .zip(&d.e1)
            .zip(&d.y1)
            .map(|((&lr, &e), &y)| logpmf(y, (e * lr.exp()).max(MU_FLOOR), psi1));
        let member = lp
            .log_rho2
            .iter()
            .zip(&d.e2)
            .zip(&d.y2)
            .map(|((&lr, &e), &y)| logpmf(y, (e * lr.exp()).max(MU_FLOOR), psi2));
        areal.chain(member).collect()
    }

    /// Log-density of the spatial prior at the state's natural-scale effects.
    pub fn log_spatial_prior(&self, state: &ParameterState) -> Result<f64> {
        let (phi1, phi2) = state.spatial_effects(&self.graph);
        match self.spec.prior {
            PriorKind::Gmcar => gmcar_logdensity(
                &phi1,
                &phi2,
                &GmcarParams {
                    alpha1: state.alpha1,
                    alpha2: state.alpha2,
                    eta0: state.eta0,
                    eta1: state.eta1,
                    tau1: state.tau1,
                    tau2: state.tau2,
                },
                &self.graph,
            ),
            PriorKind::Mcar => mcar_logdensity(
                &phi1,
                &phi2,
                state.alpha1,
                state.tau1,
                state.tau2,
                state.eta0,
                &self.graph,
            ),
        }
    }

    /// Sum of the hyperprior log-densities; QR-space coefficients are flat.
    pub fn log_hyperprior(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let h = &self.spec.hyperpriors;
        let (lo, hi) = self.parameterization.alpha_bounds();
        let alpha_terms = match self.spec.prior {
            PriorKind::Gmcar => 2.0,
            PriorKind::Mcar => 1.0,
        };
        let mut lp = -alpha_terms * (hi - lo).ln();
        lp += normal_lpdf(state.gamma1, h.gamma_sd) + normal_lpdf(state.gamma2, h.gamma_sd);
        lp += normal_lpdf(state.eta0, h.eta_sd);
        if self.spec.prior == PriorKind::Gmcar {
            lp += normal_lpdf(state.eta1, h.eta_sd);
        }
        lp += half_normal_lpdf(state.tau1, h.tau_sd) + half_normal_lpdf(state.tau2, h.tau_sd);
        lp += gamma_lpdf(state.psi1, h.psi_shape, h.psi_rate)
            + gamma_lpdf(state.psi2, h.psi_shape, h.psi_rate);
        Ok(lp)
    }

    /// Log-posterior (up to the evidence) on the natural parameter scale.
    pub fn log_posterior(&self, state: &ParameterState) -> Result<f64> {
        let hyper = self.log_hyperprior(state)?;
        let prior = self.log_spatial_prior(state)?;
        let lik: f64 = self.pointwise_loglik(state)?.iter().sum();
        Ok(lik + prior + hyper)
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        let (lo, hi) = self.parameterization.alpha_bounds();
        let alphas: &[f64] = match self.spec.prior {
            PriorKind::Gmcar => &[state.alpha1, state.alpha2],
            PriorKind::Mcar => &[state.alpha1],
        };
        for &a in alphas {
            if !(a > lo && a < hi) {
                return Err(Error::OutOfDomain { name: "alpha", value: a });
            }
        }
        if self.spec.prior == PriorKind::Mcar && (state.alpha1 != state.alpha2 || state.eta1 != 0.0) {
            return Err(Error::InvalidParameter(
                "MCAR state requires alpha1 == alpha2 and eta1 == 0".into(),
            ));
        }
        for (name, v) in [
            ("tau1", state.tau1),
            ("tau2", state.tau2),
            ("psi1", state.psi1),
            ("psi2", state.psi2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::OutOfDomain { name, value: v });
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Model::log_posterior`].
pub fn log_posterior(state: &ParameterState, model: &Model) -> Result<f64> {
    model.log_posterior(state)
}
