//! Fit and comparison statistics: saturated deviance, DIC, tail-area
//! probabilities and PSIS leave-one-out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::negbin::MU_FLOOR;
use crate::model::Dataset;
use crate::sampler::PosteriorSamples;

/// Pareto shape above which an observation's LOO estimate is unreliable.
pub const PARETO_K_THRESHOLD: f64 = 0.7;
/// Fraction of largest importance ratios that receive a tail fit.
pub const PSIS_TAIL_FRACTION: f64 = 0.2;
const MIN_TAIL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Areal outcome `y1`.
    Y1,
    /// Membership outcome `y2`.
    Y2,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Y1 => "y1",
            Outcome::Y2 => "y2",
        }
    }
}

/// `2 Σ [y log(y/μ) − (y + ψ) log((1 + y/ψ)/(1 + μ/ψ))]`, zero-count terms
/// taking `0·log 0 = 0`.
pub fn saturated_deviance(y: &[u64], mu: &[f64], psi: f64) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::InvalidParameter(format!(
            "{} counts but {} means",
            y.len(),
            mu.len()
        )));
    }
    if !(psi > 0.0) || !psi.is_finite() {
        return Err(Error::InvalidParameter(format!("dispersion must be positive, got {psi}")));
    }
    if let Some(bad) = mu.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidParameter(format!("means must be positive, got {bad}")));
    }
    Ok(deviance_unchecked(y, mu, psi))
}

fn deviance_unchecked(y: &[u64], mu: &[f64], psi: f64) -> f64 {
    let mut acc = 0.0;
    for (&yi, &m) in y.iter().zip(mu) {
        let yf = yi as f64;
        let first = if yi == 0 { 0.0 } else { yf * (yf / m).ln() };
        acc += first - (yf + psi) * ((yf / psi).ln_1p() - (m / psi).ln_1p());
    }
    2.0 * acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub d_bar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

/// DIC from per-draw fitted means (draws × observations) and dispersions.
pub fn dic_from_draws(y: &[u64], mu: &[Vec<f64>], psi: &[f64]) -> Result<DicResult> {
    if mu.is_empty() || mu.len() != psi.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} mean draws against {} dispersion draws",
            mu.len(),
            psi.len()
        )));
    }
    let s = mu.len() as f64;
    let mut d_bar = 0.0;
    let mut mu_bar = vec![0.0; y.len()];
    for (row, &p) in mu.iter().zip(psi) {
        d_bar += saturated_deviance(y, row, p)?;
        for (acc, v) in mu_bar.iter_mut().zip(row) {
            *acc += v;
        }
    }
    d_bar /= s;
    mu_bar.iter_mut().for_each(|v| *v /= s);
    let psi_bar = psi.iter().sum::<f64>() / s;
    let d_at_mean = saturated_deviance(y, &mu_bar, psi_bar)?;
    let p_d = d_bar - d_at_mean;
    Ok(DicResult {
        d_bar,
        d_at_mean,
        p_d,
        dic: d_bar + p_d,
    })
}

fn fitted_means(samples: &PosteriorSamples, data: &Dataset, outcome: Outcome) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut mu = Vec::with_capacity(samples.total_draws());
    let mut psi = Vec::with_capacity(samples.total_draws());
    for chain in &samples.chains {
        let (rho, e) = match outcome {
            Outcome::Y1 => (&chain.rho1, &data.e1),
            Outcome::Y2 => (&chain.rho2, &data.e2),
        };
        for (r, state) in rho.iter().zip(&chain.states) {
            mu.push(r.iter().zip(e).map(|(r, e)| (r * e).max(MU_FLOOR)).collect());
            psi.push(match outcome {
                Outcome::Y1 => state.psi1,
                Outcome::Y2 => state.psi2,
            });
        }
    }
    (mu, psi)
}

pub fn dic(samples: &PosteriorSamples, data: &Dataset, outcome: Outcome) -> Result<DicResult> {
    let (mu, psi) = fitted_means(samples, data, outcome);
    let y = match outcome {
        Outcome::Y1 => &data.y1,
        Outcome::Y2 => &data.y2,
    };
    dic_from_draws(y, &mu, &psi)
}

/// `p_i = P(yrep_i < y_i) + ½ P(yrep_i = y_i)` over draws (draws × observations).
pub fn tap(y: &[u64], yrep: &[Vec<u64>]) -> Result<Vec<f64>> {
    if yrep.is_empty() {
        return Err(Error::DimensionMismatch("no replicate draws".into()));
    }
    if let Some(row) = yrep.iter().find(|r| r.len() != y.len()) {
        return Err(Error::DimensionMismatch(format!(
            "replicate of length {} against {} observations",
            row.len(),
            y.len()
        )));
    }
    let s = yrep.len() as f64;
    Ok((0..y.len())
        .map(|i| {
            let (mut below, mut ties) = (0usize, 0usize);
            for row in yrep {
                match row[i].cmp(&y[i]) {
                    std::cmp::Ordering::Less => below += 1,
                    std::cmp::Ordering::Equal => ties += 1,
                    std::cmp::Ordering::Greater => {}
                }
            }
            (2 * below + ties) as f64 / (2.0 * s)
        })
        .collect())
}

/// Fraction of `p` in `[0, c] ∪ [1 − c, 1]` for each cutoff.
pub fn tail_proportions(p: &[f64], cutoffs: &[f64]) -> Vec<f64> {
    cutoffs
        .iter()
        .map(|&c| {
            let hits = p.iter().filter(|&&v| v <= c || v >= 1.0 - c).count();
            hits as f64 / p.len().max(1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSmoothing {
    /// Plain importance sampling with reciprocal-likelihood weights.
    Off,
    /// Generalized Pareto tail fitted by the Zhang–Stephens posterior mean.
    #[default]
    ZhangStephens,
    /// Generalized Pareto tail fitted by matching mean and variance; the shape
    /// estimate stays below ½, so it never trips the `k > 0.7` flag.
    MethodOfMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub looic: f64,
    pub pointwise: Vec<f64>,
    /// Fitted Pareto shape per observation; 0 when no smoothing applied.
    pub pareto_k: Vec<f64>,
    /// Observations with `k > 0.7`.
    pub flagged: Vec<usize>,
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Generalized Pareto `(k, σ)` for exceedances sorted ascending.
fn gpd_fit(x: &[f64], method: TailSmoothing) -> (f64, f64) {
    let n = x.len() as f64;
    match method {
        TailSmoothing::MethodOfMoments => {
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let ratio = mean * mean / var;
            (0.5 * (1.0 - ratio), 0.5 * mean * (ratio + 1.0))
        }
        _ => {
            let prior = 3.0;
            let grid = 30 + (n.sqrt() as usize);
            let xstar = x[((n / 4.0 + 0.5).floor() as usize).max(1) - 1];
            let xmax = x[x.len() - 1];
            let theta: Vec<f64> = (1..=grid)
                .map(|j| 1.0 / xmax + (1.0 - (grid as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar)
                .collect();
            let profile: Vec<f64> = theta
                .iter()
                .map(|&t| {
                    let k = x.iter().map(|v| (-t * v).ln_1p()).sum::<f64>() / n;
                    n * ((-t / k).ln() - k - 1.0)
                })
                .collect();
            let norm = log_sum_exp(&profile);
            let theta_hat: f64 = theta
                .iter()
                .zip(&profile)
                .map(|(t, l)| t * (l - norm).exp())
                .sum();
            let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / n;
            let sigma = -k / theta_hat;
            // Shrink toward 0.5 as if from ten extra observations.
            ((k * n + 5.0) / (n + 10.0), sigma)
        }
    }
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto-smoothed log weights from log importance ratios, plus the shape.
pub fn psis_smooth(log_ratios: &[f64], method: TailSmoothing) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    if method == TailSmoothing::Off {
        return (lw, 0.0);
    }
    let tail = (PSIS_TAIL_FRACTION * s as f64).ceil() as usize;
    if tail < MIN_TAIL || tail >= s {
        return (lw, f64::INFINITY);
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let cutoff = lw[order[s - tail - 1]];
    let tail_idx = &order[s - tail..];
    let exp_cut = cutoff.exp();
    let exceed: Vec<f64> = tail_idx.iter().map(|&i| lw[i].exp() - exp_cut).collect();
    if exceed[exceed.len() - 1] <= 0.0 || exceed.iter().all(|&e| e == exceed[0]) {
        return (lw, 0.0);
    }
    let (k, sigma) = gpd_fit(&exceed, method);
    if !k.is_finite() || !sigma.is_finite() {
        return (lw, f64::INFINITY);
    }
    for (z, &i) in tail_idx.iter().enumerate() {
        let p = (z as f64 + 0.5) / tail as f64;
        // Truncated at the largest raw weight, which is 0 after shifting.
        lw[i] = (exp_cut + gpd_quantile(p, k, sigma)).ln().min(0.0);
    }
    (lw, k)
}

/// PSIS-LOO from pointwise log-likelihoods laid out draws × observations.
pub fn loo_elpd(loglik: &[Vec<f64>], smoothing: TailSmoothing) -> Result<LooResult> {
    let s = loglik.len();
    if s == 0 {
        return Err(Error::DimensionMismatch("no draws".into()));
    }
    let n = loglik[0].len();
    if loglik.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch("ragged log-likelihood rows".into()));
    }
    if let Some((d, i)) = (0..s)
        .flat_map(|d| (0..n).map(move |i| (d, i)))
        .find(|&(d, i)| !loglik[d][i].is_finite())
    {
        return Err(Error::InvalidParameter(format!(
            "non-finite log-likelihood at draw {d}, observation {i}"
        )));
    }
    let per_obs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ll: Vec<f64> = loglik.iter().map(|r| r[i]).collect();
            let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_smooth(&ratios, smoothing);
            let num: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            (log_sum_exp(&num) - log_sum_exp(&lw), k)
        })
        .collect();
    let pointwise: Vec<f64> = per_obs.iter().map(|p| p.0).collect();
    let pareto_k: Vec<f64> = per_obs.iter().map(|p| p.1).collect();
    let elpd_loo: f64 = pointwise.iter().sum();
    Ok(LooResult {
        elpd_loo,
        looic: -2.0 * elpd_loo,
        flagged: (0..n).filter(|&i| pareto_k[i] > PARETO_K_THRESHOLD).collect(),
        pointwise,
        pareto_k,
    })
}

/// Summed pointwise difference and `√(n · V(a − b))` with the sample variance.
pub fn elpd_diff_se(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let total: f64 = d.iter().sum();
    if n < 2 {
        return Ok((total, 0.0));
    }
    let mean = total / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((total, (n as f64 * var).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub d_bar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
    pub elpd_loo: f64,
    pub looic: f64,
    pub tap_tail_05: f64,
    pub tap_tail_10: f64,
    pub tap: Vec<f64>,
    pub pointwise_elpd: Vec<f64>,
    /// Unfittable tails give `k = ∞`, stored as JSON `null`.
    #[serde(with = "infinite_as_null")]
    pub pareto_k: Vec<f64>,
    pub high_pareto_k: usize,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub y1: OutcomeReport,
    pub y2: OutcomeReport,
}

impl FitReport {
    pub fn outcome(&self, outcome: Outcome) -> &OutcomeReport {
        match outcome {
            Outcome::Y1 => &self.y1,
            Outcome::Y2 => &self.y2,
        }
    }
}

fn outcome_report(samples: &PosteriorSamples, data: &Dataset, outcome: Outcome, smoothing: TailSmoothing) -> Result<OutcomeReport> {
    let dic_v = dic(samples, data, outcome)?;
    let n = samples.n;
    let (range, y) = match outcome {
        Outcome::Y1 => (0..n, &data.y1),
        Outcome::Y2 => (n..n + samples.m, &data.y2),
    };
    let loglik: Vec<Vec<f64>> = samples
        .chains
        .iter()
        .flat_map(|c| c.loglik.iter().map(|r| r[range.clone()].to_vec()))
        .collect();
    let yrep: Vec<Vec<u64>> = samples
        .chains
        .iter()
        .flat_map(|c| match outcome {
            Outcome::Y1 => c.yrep1.iter(),
            Outcome::Y2 => c.yrep2.iter(),
        })
        .cloned()
        .collect();
    let loo = loo_elpd(&loglik, smoothing)?;
    let p = tap(y, &yrep)?;
    let tails = tail_proportions(&p, &[0.05, 0.10]);
    Ok(OutcomeReport {
        d_bar: dic_v.d_bar,
        d_at_mean: dic_v.d_at_mean,
        p_d: dic_v.p_d,
        dic: dic_v.dic,
        elpd_loo: loo.elpd_loo,
        looic: loo.looic,
        tap_tail_05: tails[0],
        tap_tail_10: tails[1],
        tap: p,
        high_pareto_k: loo.flagged.len(),
        pointwise_elpd: loo.pointwise,
        pareto_k: loo.pareto_k,
    })
}

pub fn fit_report(samples: &PosteriorSamples, data: &Dataset, smoothing: TailSmoothing) -> Result<FitReport> {
    Ok(FitReport {
        y1: outcome_report(samples, data, Outcome::Y1, smoothing)?,
        y2: outcome_report(samples, data, Outcome::Y2, smoothing)?,
    })
}
