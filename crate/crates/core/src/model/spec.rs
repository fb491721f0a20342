use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gmcar,
    Mcar,
}

/// Box constraint applied to the CAR propriety parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaConstraint {
    /// `0 < α < 1`
    UnitInterval,
    /// `|α| < 1`
    SymmetricUnit,
}

impl AlphaConstraint {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            AlphaConstraint::UnitInterval => (0.0, 1.0),
            AlphaConstraint::SymmetricUnit => (-1.0, 1.0),
        }
    }
}

/// Prior scales. Intercepts and link parameters get `Normal(0, sd²)`,
/// precisions `Half-Normal(0, sd²)` and overdispersions `Gamma(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperpriors {
    pub gamma_sd: f64,
    pub eta_sd: f64,
    pub tau_sd: f64,
    pub psi_shape: f64,
    pub psi_rate: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            gamma_sd: 5.0,
            eta_sd: 5.0,
            tau_sd: 5.0,
            psi_shape: 2.0,
            psi_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub prior: PriorKind,
    pub use_covariates: bool,
    pub hyperpriors: Hyperpriors,
    pub alpha_constraint: AlphaConstraint,
}

impl ModelSpec {
    /// Defaults: `|α| < 1` for GMCAR, `0 < α < 1` for MCAR.
    pub fn new(prior: PriorKind, use_covariates: bool) -> Self {
        let alpha_constraint = match prior {
            PriorKind::Gmcar => AlphaConstraint::SymmetricUnit,
            PriorKind::Mcar => AlphaConstraint::UnitInterval,
        };
        Self {
            prior,
            use_covariates,
            hyperpriors: Hyperpriors::default(),
            alpha_constraint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperpriors;
        for (name, v) in [
            ("gamma_sd", h.gamma_sd),
            ("eta_sd", h.eta_sd),
            ("tau_sd", h.tau_sd),
            ("psi_shape", h.psi_shape),
            ("psi_rate", h.psi_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("hyperprior {name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Admissible α interval: the constraint box intersected with the graph's
    /// positive-definiteness interval.
    pub fn alpha_bounds(&self, graph: &SpatialGraph) -> (f64, f64) {
        let (lo, hi) = self.alpha_constraint.bounds();
        let (glo, ghi) = graph.admissible_alpha();
        (lo.max(glo), hi.min(ghi))
    }
}

/// One point in parameter space.
///
/// Spatial effects are stored at unit precision: `φ₂ = φ₂ᵘ/√τ₂` and
/// `φ₁ = (η₀I + η₁W)φ₂ + φ₁ᵘ/√τ₁`. Use [`spatial_effects`](Self::spatial_effects)
/// for the natural-scale vectors. Under MCAR, `alpha1 == alpha2` and `eta1 == 0`.
///
/// `beta1`/`beta2` are coefficients on whatever design the state is used with
/// (the scaled `Q*` when fitting with covariates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub phi1_unit: Vec<f64>,
    pub phi2_unit: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub psi1: f64,
    pub psi2: f64,
}

impl ParameterState {
    /// Zero effects, `α = 0`, unit precisions and overdispersions.
    pub fn baseline(n: usize, p: usize) -> Self {
        Self {
            phi1_unit: vec![0.0; n],
            phi2_unit: vec![0.0; n],
            alpha1: 0.0,
            alpha2: 0.0,
            tau1: 1.0,
            tau2: 1.0,
            eta0: 0.0,
            eta1: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
            beta1: vec![0.0; p],
            beta2: vec![0.0; p],
            psi1: 1.0,
            psi2: 1.0,
        }
    }

    /// Natural-scale `(φ₁, φ₂)`.
    pub fn spatial_effects(&self, graph: &SpatialGraph) -> (Vec<f64>, Vec<f64>) {
        let s2 = self.tau2.sqrt();
        let s1 = self.tau1.sqrt();
        let phi2: Vec<f64> = self.phi2_unit.iter().map(|v| v / s2).collect();
        let w = graph.neighbor_sum(&phi2);
        let phi1 = self
            .phi1_unit
            .iter()
            .enumerate()
            .map(|(i, v)| self.eta0 * phi2[i] + self.eta1 * w[i] + v / s1)
            .collect();
        (phi1, phi2)
    }

    /// Sets the unit-precision effects so that [`spatial_effects`](Self::spatial_effects)
    /// returns `(phi1, phi2)` under the current `τ`'s and `η`'s.
    pub fn set_spatial_effects(&mut self, phi1: &[f64], phi2: &[f64], graph: &SpatialGraph) {
        let s2 = self.tau2.sqrt();
        let s1 = self.tau1.sqrt();
        let w = graph.neighbor_sum(phi2);
        self.phi2_unit = phi2.iter().map(|v| v * s2).collect();
        self.phi1_unit = phi1
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.eta0 * phi2[i] - self.eta1 * w[i]) * s1)
            .collect();
    }
}
