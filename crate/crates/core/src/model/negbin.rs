//! Negative binomial in the mean/overdispersion parameterization,
//! `Var(Y) = μ + μ²/ψ`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Means below this are floored before evaluating the likelihood.
pub const MU_FLOOR: f64 = 1e-12;

/// Below this count `ψ(y+ψ) − ψ(ψ)` is summed exactly.
const DIGAMMA_SUM_LIMIT: u64 = 256;

pub fn negbin_logpmf(y: u64, mu: f64, psi: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("negative binomial mean {mu}")));
    }
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::InvalidParameter(format!("negative binomial overdispersion {psi}")));
    }
    Ok(logpmf(y, mu, psi))
}

/// `log f(y; μ, ψ)` without argument checks.
pub(crate) fn logpmf(y: u64, mu: f64, psi: f64) -> f64 {
    let yf = y as f64;
    let log_total = (mu + psi).ln();
    let kernel = psi * (psi.ln() - log_total);
    if y == 0 {
        return kernel;
    }
    ln_gamma(yf + psi) - ln_gamma(psi) - ln_gamma(yf + 1.0) + yf * (mu.ln() - log_total) + kernel
}

/// `∂ log f / ∂ log μ = ψ (y − μ) / (μ + ψ)`.
pub(crate) fn dlogpmf_dlogmu(y: u64, mu: f64, psi: f64) -> f64 {
    psi * (y as f64 - mu) / (mu + psi)
}

/// `∂ log f / ∂ψ`.
pub(crate) fn dlogpmf_dpsi(y: u64, mu: f64, psi: f64) -> f64 {
    let yf = y as f64;
    let total = mu + psi;
    digamma_shift(y, psi) + (psi / total).ln() + 1.0 - (yf + psi) / total
}

/// `digamma(y + ψ) − digamma(ψ)`.
fn digamma_shift(y: u64, psi: f64) -> f64 {
    if y <= DIGAMMA_SUM_LIMIT {
        (0..y).map(|k| 1.0 / (psi + k as f64)).sum()
    } else {
        digamma(y as f64 + psi) - digamma(psi)
    }
}

/// Draws from NegBin(μ, ψ) as a gamma-mixed Poisson.
pub fn sample_negbin<R: Rng + ?Sized>(rng: &mut R, mu: f64, psi: f64) -> u64 {
    let rate = Gamma::new(psi, mu / psi)
        .map(|g| g.sample(rng))
        .unwrap_or(mu);
    sample_poisson(rng, rate)
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as u64
        }
        Err(_) => lambda.round() as u64,
    }
}
