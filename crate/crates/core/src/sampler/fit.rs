use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hmc::{run_chain, ChainOutput, HmcSettings, LogDensity};
use crate::error::{Error, Result};
use crate::model::negbin::{sample_negbin, MU_FLOOR};
use crate::model::{Model, ParameterState, PriorKind};

/// Retries allowed when a random initialization has non-finite density.
const INIT_ATTEMPTS: usize = 100;

/// Post-warmup divergence rate above which a chain is reported.
pub const DIVERGENCE_WARNING_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub chains: usize,
    /// Iterations per chain, warm-up included.
    pub iterations: usize,
    pub warmup_fraction: f64,
    /// Mean leapfrog steps per transition.
    pub steps: usize,
    pub max_tree_depth: u32,
    pub target_accept: f64,
    /// Half-width of the uniform box initial unconstrained values are drawn from.
    pub init_radius: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 2500,
            warmup_fraction: 0.5,
            steps: 48,
            max_tree_depth: 10,
            target_accept: 0.8,
            init_radius: 2.0,
            seed: 20_240_601,
        }
    }
}

impl FitConfig {
    pub fn num_warmup(&self) -> usize {
        (self.iterations as f64 * self.warmup_fraction).round() as usize
    }

    pub fn num_draws(&self) -> usize {
        self.iterations - self.num_warmup()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("at least one chain is required".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup fraction must lie in [0, 1)".into()));
        }
        if self.num_draws() == 0 || self.iterations <= self.num_warmup() {
            return Err(Error::InvalidConfig("iterations must exceed warm-up".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target acceptance must lie in (0, 1)".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if !(self.init_radius >= 0.0) {
            return Err(Error::InvalidConfig("init radius must be non-negative".into()));
        }
        Ok(())
    }

    fn settings(&self) -> HmcSettings {
        HmcSettings {
            num_warmup: self.num_warmup(),
            num_draws: self.num_draws(),
            steps: self.steps,
            max_tree_depth: self.max_tree_depth,
            target_accept: self.target_accept,
        }
    }
}

/// Per-chain generator: one ChaCha stream per chain index under a common seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Draws every unconstrained coordinate uniformly from `[−radius, radius]`.
pub fn initialize_chain<R: Rng + ?Sized>(model: &Model, radius: f64, rng: &mut R) -> ParameterState {
    let par = model.parameterization();
    let u: Vec<f64> = (0..par.dim())
        .map(|_| {
            if radius > 0.0 {
                rng.random_range(-radius..=radius)
            } else {
                0.0
            }
        })
        .collect();
    par.from_unconstrained(&u)
}

/// Runs independent chains on an arbitrary target. `init` supplies each
/// chain's starting point from its own generator.
pub fn sample_target<T, F>(target: &T, config: &FitConfig, init: F) -> Result<Vec<ChainOutput>>
where
    T: LogDensity,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    config.validate()?;
    let settings = config.settings();
    (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(config.seed, chain);
            let x0 = init(&mut rng);
            run_chain(target, x0, &settings, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub mean_accept: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub mean_steps: f64,
}

/// One chain's post-warmup draws with their derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub states: Vec<ParameterState>,
    pub phi1: Vec<Vec<f64>>,
    pub phi2: Vec<Vec<f64>>,
    pub rho1: Vec<Vec<f64>>,
    /// Areal log prevalence risk `ζ₂`.
    pub zeta2: Vec<Vec<f64>>,
    pub rho2: Vec<Vec<f64>>,
    pub yrep1: Vec<Vec<u64>>,
    pub yrep2: Vec<Vec<u64>>,
    /// `n` areal then `m` membership pointwise log-likelihoods.
    pub loglik: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    DivergenceRateExceeded { chain: usize, rate: f64 },
}

impl std::fmt::Display for FitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitWarning::DivergenceRateExceeded { chain, rate } => {
                write!(f, "chain {chain}: {:.1}% of transitions diverged", 100.0 * rate)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub prior: PriorKind,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub chains: Vec<ChainSamples>,
    /// `R*⁻¹`, mapping sampled QR coefficients to normalized-scale β.
    pub beta_map: Option<DMatrix<f64>>,
}

impl PosteriorSamples {
    pub fn num_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains.first().map_or(0, |c| c.states.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.states.len()).sum()
    }

    pub fn warnings(&self) -> Vec<FitWarning> {
        self.chains
            .iter()
            .enumerate()
            .filter_map(|(chain, c)| {
                let rate = c.stats.divergences as f64 / c.states.len().max(1) as f64;
                (rate > DIVERGENCE_WARNING_RATE)
                    .then_some(FitWarning::DivergenceRateExceeded { chain, rate })
            })
            .collect()
    }

    /// Names of the scalar model parameters, in reporting order.
    pub fn scalar_names(&self) -> Vec<String> {
        let mut names: Vec<String> = match self.prior {
            PriorKind::Gmcar => ["alpha1", "alpha2", "tau1", "tau2", "eta0", "eta1"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            PriorKind::Mcar => ["alpha", "tau1", "tau2", "eta0"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        };
        names.extend(["gamma1", "gamma2", "psi1", "psi2"].iter().map(|s| s.to_string()));
        for outcome in 1..=2 {
            for k in 0..self.p {
                names.push(format!("beta{outcome}[{k}]"));
            }
        }
        names
    }

    fn scalar_value(&self, state: &ParameterState, name: &str) -> Option<f64> {
        let v = match name {
            "alpha" | "alpha1" => state.alpha1,
            "alpha2" => state.alpha2,
            "tau1" => state.tau1,
            "tau2" => state.tau2,
            "eta0" => state.eta0,
            "eta1" => state.eta1,
            "gamma1" => state.gamma1,
            "gamma2" => state.gamma2,
            "psi1" => state.psi1,
            "psi2" => state.psi2,
            _ => {
                let (outcome, k) = parse_indexed(name)?;
                let theta = match outcome {
                    "beta1" => &state.beta1,
                    "beta2" => &state.beta2,
                    "theta1" => return state.beta1.get(k).copied(),
                    "theta2" => return state.beta2.get(k).copied(),
                    _ => return None,
                };
                match &self.beta_map {
                    Some(map) => (0..self.p).map(|j| map[(k, j)] * theta[j]).sum(),
                    None => *theta.get(k)?,
                }
            }
        };
        Some(v)
    }

    /// Draws of a named scalar, chains × iterations.
    pub fn scalar_draws(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        if let Some((base, i)) = parse_indexed(name) {
            fn pick<'a>(c: &'a ChainSamples, base: &str) -> Option<&'a Vec<Vec<f64>>> {
                match base {
                    "phi1" => Some(&c.phi1),
                    "phi2" => Some(&c.phi2),
                    _ => None,
                }
            }
            if let Some(first) = self.chains.first().and_then(|c| pick(c, base)) {
                if first.first().is_some_and(|d| i < d.len()) {
                    return Some(
                        self.chains
                            .iter()
                            .map(|c| pick(c, base).unwrap().iter().map(|d| d[i]).collect())
                            .collect(),
                    );
                }
                return None;
            }
        }
        let first = self.chains.first()?.states.first()?;
        self.scalar_value(first, name)?;
        Some(
            self.chains
                .iter()
                .map(|c| {
                    c.states
                        .iter()
                        .map(|s| self.scalar_value(s, name).unwrap())
                        .collect()
                })
                .collect(),
        )
    }

    /// Every quantity written to the long-format posterior table: scalars,
    /// QR-space coefficients and natural-scale spatial effects.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.scalar_names();
        for outcome in 1..=2 {
            for k in 0..self.p {
                names.push(format!("theta{outcome}[{k}]"));
            }
        }
        for outcome in 1..=2 {
            for i in 0..self.n {
                names.push(format!("phi{outcome}[{i}]"));
            }
        }
        names
    }
}

fn parse_indexed(name: &str) -> Option<(&str, usize)> {
    let open = name.find('[')?;
    let close = name.strip_suffix(']')?;
    let idx = close[open + 1..].parse().ok()?;
    Some((&name[..open], idx))
}

fn derive_chain<R: Rng + ?Sized>(
    model: &Model,
    output: ChainOutput,
    rng: &mut R,
) -> Result<ChainSamples> {
    let par = model.parameterization();
    let data = model.data();
    let mut out = ChainSamples {
        states: Vec::with_capacity(output.draws.len()),
        phi1: Vec::new(),
        phi2: Vec::new(),
        rho1: Vec::new(),
        zeta2: Vec::new(),
        rho2: Vec::new(),
        yrep1: Vec::new(),
        yrep2: Vec::new(),
        loglik: Vec::new(),
        stats: ChainStats {
            step_size: output.step_size,
            mean_accept: output.mean_accept(),
            divergences: output.divergences(),
            warmup_divergences: output.warmup_divergences,
            mean_steps: output.transitions.iter().map(|t| t.steps as f64).sum::<f64>()
                / output.transitions.len().max(1) as f64,
        },
    };
    for u in &output.draws {
        let state = par.from_unconstrained(u);
        let (phi1, phi2) = state.spatial_effects(model.graph());
        let lp = model.linear_predictors(&state)?;
        let rho1: Vec<f64> = lp.log_rho1.iter().map(|v| v.exp()).collect();
        let rho2: Vec<f64> = lp.log_rho2.iter().map(|v| v.exp()).collect();
        let yrep1 = rho1
            .iter()
            .zip(&data.e1)
            .map(|(r, e)| sample_negbin(rng, (r * e).max(MU_FLOOR), state.psi1))
            .collect();
        let yrep2 = rho2
            .iter()
            .zip(&data.e2)
            .map(|(r, e)| sample_negbin(rng, (r * e).max(MU_FLOOR), state.psi2))
            .collect();
        out.loglik.push(model.pointwise_from_predictors(&lp, state.psi1, state.psi2));
        out.zeta2.push(lp.zeta2.clone());
        out.rho1.push(rho1);
        out.rho2.push(rho2);
        out.yrep1.push(yrep1);
        out.yrep2.push(yrep2);
        out.phi1.push(phi1);
        out.phi2.push(phi2);
        out.states.push(state);
    }
    Ok(out)
}

/// Fits the model with multi-chain HMC and computes per-draw derived quantities.
pub fn hmc_fit(model: &Model, config: &FitConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let settings = config.settings();
    let par = model.parameterization();
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(config.seed, chain);
            let mut init = None;
            for _ in 0..INIT_ATTEMPTS {
                let state = initialize_chain(model, config.init_radius, &mut rng);
                let u = par.to_unconstrained(&state)?;
                if model.log_density(&u).is_finite() {
                    init = Some(u);
                    break;
                }
            }
            let init = init.ok_or(Error::NonFiniteDensity(INIT_ATTEMPTS))?;
            let output = run_chain(model, init, &settings, &mut rng)?;
            derive_chain(model, output, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        prior: model.spec().prior,
        n: model.graph().n(),
        m: model.membership().m(),
        p: model.p(),
        chains,
        beta_map: model.covariates().map(|c| c.r_star_inverse.clone()),
    })
}
