//! Gaussian Markov random field densities for the univariate, MCAR and GMCAR priors.

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Parameters of `φ₁ | φ₂ ~ N((η₀I + η₁W)φ₂, [τ₁(D − α₁W)]⁻¹)`, `φ₂ ~ N(0, [τ₂(D − α₂W)]⁻¹)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmcarParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl GmcarParams {
    /// The MCAR(α, Λ) special case: `η₁ = 0`, `α₁ = α₂ = α`.
    pub fn mcar(alpha: f64, tau1: f64, tau2: f64, eta0: f64) -> Self {
        Self {
            alpha1: alpha,
            alpha2: alpha,
            eta0,
            eta1: 0.0,
            tau1,
            tau2,
        }
    }
}

/// Symmetric positive definite 2×2 cross-outcome precision `Λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossPrecision {
    pub l11: f64,
    pub l12: f64,
    pub l22: f64,
}

impl CrossPrecision {
    /// `(τ₁, τ₂, η₀)` with `τ₁ = Λ₁₁`, `τ₂ = Λ₂₂ − Λ₁₂²/Λ₁₁`, `η₀ = −Λ₁₂/Λ₁₁`.
    pub fn to_conditional(&self) -> Result<(f64, f64, f64)> {
        let tau2 = self.l22 - self.l12 * self.l12 / self.l11;
        if !(self.l11 > 0.0) || !(tau2 > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok((self.l11, tau2, -self.l12 / self.l11))
    }

    pub fn from_conditional(tau1: f64, tau2: f64, eta0: f64) -> Self {
        Self {
            l11: tau1,
            l12: -eta0 * tau1,
            l22: tau2 + eta0 * eta0 * tau1,
        }
    }
}

/// Log-density of `N(0, [τ(D − αW)]⁻¹)` at `phi`.
pub fn car_logdensity(phi: &[f64], alpha: f64, tau: f64, graph: &SpatialGraph) -> Result<f64> {
    check_len(phi.len(), graph)?;
    let logdet = graph.car_logdet(alpha, tau)?;
    let n = graph.n() as f64;
    Ok(0.5 * logdet - n * HALF_LN_2PI - 0.5 * tau * graph.car_quadratic_form(phi, alpha))
}

/// `log p(φ₂) + log p(φ₁ | φ₂)` under the GMCAR prior.
pub fn gmcar_logdensity(
    phi1: &[f64],
    phi2: &[f64],
    params: &GmcarParams,
    graph: &SpatialGraph,
) -> Result<f64> {
    check_len(phi1.len(), graph)?;
    check_len(phi2.len(), graph)?;
    let marginal = car_logdensity(phi2, params.alpha2, params.tau2, graph)?;
    let wphi2 = graph.neighbor_sum(phi2);
    let residual: Vec<f64> = phi1
        .iter()
        .zip(phi2)
        .zip(&wphi2)
        .map(|((&a, &b), &wb)| a - params.eta0 * b - params.eta1 * wb)
        .collect();
    let conditional = car_logdensity(&residual, params.alpha1, params.tau1, graph)?;
    Ok(marginal + conditional)
}

/// MCAR(α, Λ) log-density written through the GMCAR reduction.
pub fn mcar_logdensity(
    phi1: &[f64],
    phi2: &[f64],
    alpha: f64,
    tau1: f64,
    tau2: f64,
    eta0: f64,
    graph: &SpatialGraph,
) -> Result<f64> {
    gmcar_logdensity(phi1, phi2, &GmcarParams::mcar(alpha, tau1, tau2, eta0), graph)
}

fn check_len(len: usize, graph: &SpatialGraph) -> Result<()> {
    if len != graph.n() {
        return Err(Error::DimensionMismatch(format!(
            "spatial effect has length {len}, graph has {} areas",
            graph.n()
        )));
    }
    Ok(())
}
