//! Convergence diagnostics for multi-chain output: split R̂, bulk ESS and
//! posterior summaries.

use serde::Serialize;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::sampler::PosteriorSamples;

/// Quantile levels reported for every quantity.
pub const QUANTILES: [f64; 4] = [0.025, 0.05, 0.95, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RhatMethod {
    /// Between/within variance ratio over half-chains.
    #[default]
    Classic,
    /// Maximum of the rank-normalized and folded rank-normalized split R̂.
    RankNormalized,
}

/// Trims chains to a common even length and splits each into halves.
fn split_chains(draws: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no chains supplied".into()));
    }
    let len = draws.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 {
        return Err(Error::InvalidParameter(format!(
            "split diagnostics need at least 4 draws per chain, got {len}"
        )));
    }
    let half = len / 2;
    let mut out = Vec::with_capacity(2 * draws.len());
    for chain in draws {
        // With an odd length the middle draw is dropped.
        out.push(&chain[..half]);
        out.push(&chain[len - half..len]);
    }
    Ok(out)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn all_identical(draws: &[Vec<f64>]) -> bool {
    let mut it = draws.iter().flatten();
    match it.next() {
        Some(first) => it.all(|v| v == first),
        None => true,
    }
}

fn rhat_of_chains(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let between_over_n = sample_variance(&means);
    let var_plus = (n - 1.0) / n * within + between_over_n;
    if within == 0.0 {
        return f64::INFINITY;
    }
    (var_plus / within).sqrt()
}

/// Classic split-R̂: `√(V̂/W)` over the `2·chains` half-chains.
pub fn split_rhat(draws: &[Vec<f64>]) -> Result<f64> {
    let split = split_chains(draws)?;
    if all_identical(draws) {
        return Err(Error::DegenerateDraws);
    }
    Ok(rhat_of_chains(&split))
}

pub fn rhat(draws: &[Vec<f64>], method: RhatMethod) -> Result<f64> {
    match method {
        RhatMethod::Classic => split_rhat(draws),
        RhatMethod::RankNormalized => {
            split_chains(draws)?;
            if all_identical(draws) {
                return Err(Error::DegenerateDraws);
            }
            let z = rank_normalize(draws);
            let median = quantile_sorted(&sorted_pool(draws), 0.5);
            let folded: Vec<Vec<f64>> = draws
                .iter()
                .map(|c| c.iter().map(|v| (v - median).abs()).collect())
                .collect();
            let zf = rank_normalize(&folded);
            let a = rhat_of_chains(&split_chains(&z)?);
            let b = rhat_of_chains(&split_chains(&zf)?);
            Ok(a.max(b))
        }
    }
}

fn sorted_pool(draws: &[Vec<f64>]) -> Vec<f64> {
    let mut all: Vec<f64> = draws.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    all
}

/// Replaces pooled draws by normal scores of their average ranks,
/// `Φ⁻¹((r − 3/8) / (S + 1/4))`.
pub fn rank_normalize(draws: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> = draws
        .iter()
        .enumerate()
        .flat_map(|(c, chain)| chain.iter().enumerate().map(move |(i, &v)| (v, c, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = idx.len() as f64;
    let mut out: Vec<Vec<f64>> = draws.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && idx[end].0 == idx[start].0 {
            end += 1;
        }
        // Average 1-based rank over the tie block.
        let rank = (start + 1 + end) as f64 / 2.0;
        let p = (rank - 0.375) / (s + 0.25);
        let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
        for &(_, c, i) in &idx[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

/// Biased autocovariance at `lag`.
fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (x[t] - mean) * (x[t + lag] - mean);
    }
    acc / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
/// Not capped: antithetic chains can exceed the number of draws.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_at = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m
    };
    let acov0 = acov_at(0);
    let within = acov0 * nf / (nf - 1.0);
    let mut var_plus = within * (nf - 1.0) / nf;
    if chains.len() > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| 1.0 - (within - acov_at(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n + 1];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut t = 1;
    while t + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho(t + 1);
        rho_odd = rho(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t + 1] = rho_even;
            rho_hat[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t + 1] = rho_even;
    }
    // Initial monotone sequence.
    let mut s = 1;
    while s + 3 <= max_t {
        let prev = rho_hat[s - 1] + rho_hat[s];
        if rho_hat[s + 1] + rho_hat[s + 2] > prev {
            rho_hat[s + 1] = prev / 2.0;
            rho_hat[s + 2] = rho_hat[s + 1];
        }
        s += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t + 1];
    // Floor guards against an unbounded estimate for strongly antithetic draws.
    let total = m * nf;
    total / tau.max(1.0 / total.log10())
}

/// Bulk ESS: [`ess`] of the rank-normalized split chains.
pub fn ess_bulk(draws: &[Vec<f64>]) -> Result<f64> {
    split_chains(draws)?;
    if all_identical(draws) {
        return Err(Error::DegenerateDraws);
    }
    let z = rank_normalize(draws);
    Ok(ess(&split_chains(&z)?))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub se_mean: f64,
    pub sd: f64,
    /// Values at [`QUANTILES`].
    pub quantiles: [f64; 4],
    /// NaN when every draw is identical.
    pub rhat: f64,
    /// Capped at the total number of draws; NaN when degenerate.
    pub ess_bulk: f64,
}

impl QuantitySummary {
    pub fn interval95(&self) -> (f64, f64) {
        (self.quantiles[0], self.quantiles[3])
    }
}

pub fn summarize_quantity(name: &str, draws: &[Vec<f64>], method: RhatMethod) -> QuantitySummary {
    let pooled = sorted_pool(draws);
    let total = pooled.len() as f64;
    let mean_v = pooled.iter().sum::<f64>() / total;
    let sd = if pooled.len() > 1 {
        (pooled.iter().map(|v| (v - mean_v).powi(2)).sum::<f64>() / (total - 1.0)).sqrt()
    } else {
        0.0
    };
    let rhat_v = rhat(draws, method).unwrap_or(f64::NAN);
    let ess_v = ess_bulk(draws).map(|e| e.min(total)).unwrap_or(f64::NAN);
    let se_mean = if sd == 0.0 { 0.0 } else { sd / ess_v.sqrt() };
    QuantitySummary {
        name: name.to_string(),
        mean: mean_v,
        se_mean,
        sd,
        quantiles: QUANTILES.map(|q| quantile_sorted(&pooled, q)),
        rhat: rhat_v,
        ess_bulk: ess_v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub rhat_method: RhatMethod,
    pub quantities: Vec<QuantitySummary>,
}

impl DiagnosticsReport {
    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }

    /// Largest finite R̂ across quantities.
    pub fn max_rhat(&self) -> f64 {
        self.quantities
            .iter()
            .map(|q| q.rhat)
            .filter(|r| r.is_finite())
            .fold(f64::NAN, f64::max)
    }
}

/// Summaries of every named quantity in `names`, reading draws from `samples`.
pub fn summarize_named(samples: &PosteriorSamples, names: &[String], method: RhatMethod) -> DiagnosticsReport {
    let quantities = names
        .iter()
        .filter_map(|name| {
            samples
                .scalar_draws(name)
                .map(|d| summarize_quantity(name, &d, method))
        })
        .collect();
    DiagnosticsReport {
        rhat_method: method,
        quantities,
    }
}

/// Summaries of arbitrary named draws (each chains × iterations).
pub fn summarize_draws<'a, I>(items: I, method: RhatMethod) -> DiagnosticsReport
where
    I: IntoIterator<Item = (&'a str, &'a [Vec<f64>])>,
{
    DiagnosticsReport {
        rhat_method: method,
        quantities: items
            .into_iter()
            .map(|(name, d)| summarize_quantity(name, d, method))
            .collect(),
    }
}

/// Scalar parameters followed by the natural-scale spatial effects.
pub fn summarize(samples: &PosteriorSamples) -> DiagnosticsReport {
    let mut names = samples.scalar_names();
    for outcome in 1..=2 {
        for i in 0..samples.n {
            names.push(format!("phi{outcome}[{i}]"));
        }
    }
    summarize_named(samples, &names, RhatMethod::Classic)
}
