//! Log-density and analytic gradient in the unconstrained coordinates.
//!
//! In the spectral coordinates each CAR prior together with its Jacobian
//! collapses to `−½ z_k²` for whitened modes and to the `N(0, 1/(1 − αλ_k))`
//! density for centered ones; `α` also reaches the likelihood through the mode
//! scales and the τ's through the rescaling of `φ`. This equals
//! `log_posterior(state) + log_jacobian(u)`.

use super::negbin::{dlogpmf_dlogmu, dlogpmf_dpsi, logpmf, MU_FLOOR};
use super::posterior::{gamma_lpdf, half_normal_lpdf, normal_lpdf, Model, HALF_LN_2PI};
use super::spec::ParameterState;
use crate::error::Result;
use crate::sampler::transform::sigmoid;

impl Model {
    /// Log target density at `u`, or `-inf` outside the support.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        self.evaluate(u, None)
    }

    /// Log target density at `u`; writes `∇_u` into `grad`.
    pub fn log_density_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(u, Some(grad))
    }

    /// Gradient of the log target over all unconstrained coordinates at `state`.
    pub fn grad_log_posterior(&self, state: &ParameterState) -> Result<Vec<f64>> {
        let u = self.parameterization().to_unconstrained(state)?;
        let mut g = vec![0.0; u.len()];
        self.log_density_and_grad(&u, &mut g);
        Ok(g)
    }

    fn evaluate(&self, u: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let par = self.parameterization();
        let o = *par.offsets();
        let graph = self.graph();
        let h = self.membership();
        let data = self.data();
        let hp = &self.spec().hyperpriors;
        let n = graph.n();
        let p = par.p();
        let (lo, hi) = par.alpha_bounds();
        let width = hi - lo;

        let z1 = &u[o.phi1..o.phi1 + n];
        let z2 = &u[o.phi2..o.phi2 + n];
        let s_a1 = sigmoid(u[o.alpha1]);
        let alpha1 = lo + width * s_a1;
        let (s_a2, alpha2) = match o.alpha2 {
            Some(i) => {
                let s = sigmoid(u[i]);
                (s, lo + width * s)
            }
            None => (s_a1, alpha1),
        };
        let log_tau1 = u[o.log_tau1];
        let log_tau2 = u[o.log_tau2];
        let tau1 = log_tau1.exp();
        let tau2 = log_tau2.exp();
        let eta0 = u[o.eta0];
        let eta1 = o.eta1.map_or(0.0, |i| u[i]);
        let gamma1 = u[o.gamma1];
        let gamma2 = u[o.gamma2];
        let theta1 = &u[o.theta1..o.theta1 + p];
        let theta2 = &u[o.theta2..o.theta2 + p];
        let psi1 = u[o.log_psi1].exp();
        let psi2 = u[o.log_psi2].exp();
        if !(alpha1 > lo && alpha1 < hi && alpha2 > lo && alpha2 < hi)
            || !tau1.is_finite()
            || !tau2.is_finite()
            || !(tau1 > 0.0 && tau2 > 0.0 && psi1 > 0.0 && psi2 > 0.0)
            || !psi1.is_finite()
            || !psi2.is_finite()
        {
            return f64::NEG_INFINITY;
        }

        let sc1 = par.mode_scales(alpha1);
        let sc2 = par.mode_scales(alpha2);
        let phi1u = par.color(z1, &sc1);
        let phi2u = par.color(z2, &sc2);

        // Natural-scale effects and linear predictors.
        let inv_s1 = (-0.5 * log_tau1).exp();
        let inv_s2 = (-0.5 * log_tau2).exp();
        let phi2: Vec<f64> = phi2u.iter().map(|v| v * inv_s2).collect();
        let wphi2 = graph.neighbor_sum(&phi2);
        let mut zeta1 = vec![0.0; n];
        let mut zeta2 = vec![0.0; n];
        for i in 0..n {
            zeta1[i] = gamma1 + eta0 * phi2[i] + eta1 * wphi2[i] + phi1u[i] * inv_s1;
            zeta2[i] = gamma2 + phi2[i];
        }
        if let Some(q) = self.design() {
            for k in 0..p {
                let col = q.column(k);
                for i in 0..n {
                    zeta1[i] += col[i] * theta1[k];
                    zeta2[i] += col[i] * theta2[k];
                }
            }
        }
        let log_rho2 = h.project_unchecked(&zeta2);

        // Likelihood.
        let mut lp = 0.0;
        let mut score1 = vec![0.0; n];
        let mut score2 = vec![0.0; h.m()];
        let mut dpsi1 = 0.0;
        let mut dpsi2 = 0.0;
        let want_grad = grad.is_some();
        for i in 0..n {
            let raw = data.e1[i] * zeta1[i].exp();
            let mu = raw.max(MU_FLOOR);
            let y = data.y1[i];
            lp += logpmf(y, mu, psi1);
            if want_grad {
                if raw > MU_FLOOR {
                    score1[i] = dlogpmf_dlogmu(y, mu, psi1);
                }
                dpsi1 += dlogpmf_dpsi(y, mu, psi1);
            }
        }
        for j in 0..h.m() {
            let raw = data.e2[j] * log_rho2[j].exp();
            let mu = raw.max(MU_FLOOR);
            let y = data.y2[j];
            lp += logpmf(y, mu, psi2);
            if want_grad {
                if raw > MU_FLOOR {
                    score2[j] = dlogpmf_dlogmu(y, mu, psi2);
                }
                dpsi2 += dlogpmf_dpsi(y, mu, psi2);
            }
        }

        // Spectral CAR priors.
        let nf = n as f64;
        let lambda = par.eigenvalues();
        lp -= 2.0 * nf * HALF_LN_2PI;
        for k in 0..n {
            if par.is_centered(k) {
                let (q1, q2) = (1.0 - alpha1 * lambda[k], 1.0 - alpha2 * lambda[k]);
                lp += 0.5 * (q1.ln() + q2.ln()) - 0.5 * (q1 * z1[k] * z1[k] + q2 * z2[k] * z2[k]);
            } else {
                lp -= 0.5 * (z1[k] * z1[k] + z2[k] * z2[k]);
            }
        }

        // Hyperpriors and Jacobians of the scalar transforms.
        let n_alpha = if o.alpha2.is_some() { 2.0 } else { 1.0 };
        lp -= n_alpha * width.ln();
        lp += normal_lpdf(gamma1, hp.gamma_sd) + normal_lpdf(gamma2, hp.gamma_sd);
        lp += normal_lpdf(eta0, hp.eta_sd);
        if o.eta1.is_some() {
            lp += normal_lpdf(eta1, hp.eta_sd);
        }
        lp += half_normal_lpdf(tau1, hp.tau_sd) + half_normal_lpdf(tau2, hp.tau_sd);
        lp += gamma_lpdf(psi1, hp.psi_shape, hp.psi_rate) + gamma_lpdf(psi2, hp.psi_shape, hp.psi_rate);
        let alpha_jac = |s: f64| width.ln() + s.ln() + (1.0 - s).ln();
        lp += alpha_jac(s_a1);
        if o.alpha2.is_some() {
            lp += alpha_jac(s_a2);
        }
        lp += log_tau1 + log_tau2 + u[o.log_psi1] + u[o.log_psi2];

        let Some(g) = grad.as_deref_mut() else {
            return lp;
        };
        if !lp.is_finite() {
            g.fill(0.0);
            return lp;
        }

        // ∂/∂ζ₁ = score1, ∂/∂ζ₂ = Hᵀ score2.
        let a = &score1;
        let b = h.project_transpose(&score2);
        let wa = graph.neighbor_sum(a);
        // Total derivative of the likelihood w.r.t. natural φ₂.
        let c: Vec<f64> = (0..n).map(|i| b[i] + eta0 * a[i] + eta1 * wa[i]).collect();

        let g1: Vec<f64> = a.iter().map(|v| v * inv_s1).collect();
        let g2: Vec<f64> = c.iter().map(|v| v * inv_s2).collect();
        let r1 = par.project_modes(&g1);
        let r2 = par.project_modes(&g2);
        let mut dalpha1 = 0.0;
        let mut dalpha2 = 0.0;
        for k in 0..n {
            let l = lambda[k];
            if par.is_centered(k) {
                let (q1, q2) = (1.0 - alpha1 * l, 1.0 - alpha2 * l);
                g[o.phi1 + k] = r1[k] - q1 * z1[k];
                g[o.phi2 + k] = r2[k] - q2 * z2[k];
                dalpha1 += -0.5 * l / q1 + 0.5 * l * z1[k] * z1[k];
                dalpha2 += -0.5 * l / q2 + 0.5 * l * z2[k] * z2[k];
            } else {
                g[o.phi1 + k] = sc1[k] * r1[k] - z1[k];
                g[o.phi2 + k] = sc2[k] * r2[k] - z2[k];
                dalpha1 += r1[k] * 0.5 * l * sc1[k].powi(3) * z1[k];
                dalpha2 += r2[k] * 0.5 * l * sc2[k].powi(3) * z2[k];
            }
        }
        let chain = |s: f64| width * s * (1.0 - s);
        match o.alpha2 {
            Some(i) => {
                g[o.alpha1] = dalpha1 * chain(s_a1) + 1.0 - 2.0 * s_a1;
                g[i] = dalpha2 * chain(s_a2) + 1.0 - 2.0 * s_a2;
            }
            None => {
                g[o.alpha1] = (dalpha1 + dalpha2) * chain(s_a1) + 1.0 - 2.0 * s_a1;
            }
        }

        let tau_sd2 = hp.tau_sd * hp.tau_sd;
        let a_dot_noise1: f64 = (0..n).map(|i| a[i] * phi1u[i]).sum::<f64>() * inv_s1;
        let c_dot_phi2: f64 = (0..n).map(|i| c[i] * phi2[i]).sum();
        g[o.log_tau1] = -0.5 * a_dot_noise1 - tau1 * tau1 / tau_sd2 + 1.0;
        g[o.log_tau2] = -0.5 * c_dot_phi2 - tau2 * tau2 / tau_sd2 + 1.0;

        let eta_var = hp.eta_sd * hp.eta_sd;
        g[o.eta0] = (0..n).map(|i| a[i] * phi2[i]).sum::<f64>() - eta0 / eta_var;
        if let Some(i) = o.eta1 {
            g[i] = (0..n).map(|k| a[k] * wphi2[k]).sum::<f64>() - eta1 / eta_var;
        }

        let gamma_var = hp.gamma_sd * hp.gamma_sd;
        g[o.gamma1] = a.iter().sum::<f64>() - gamma1 / gamma_var;
        g[o.gamma2] = b.iter().sum::<f64>() - gamma2 / gamma_var;

        if let Some(q) = self.design() {
            for k in 0..p {
                let col = q.column(k);
                g[o.theta1 + k] = (0..n).map(|i| col[i] * a[i]).sum();
                g[o.theta2 + k] = (0..n).map(|i| col[i] * b[i]).sum();
            }
        }

        g[o.log_psi1] = psi1 * dpsi1 + hp.psi_shape - hp.psi_rate * psi1;
        g[o.log_psi2] = psi2 * dpsi2 + hp.psi_shape - hp.psi_rate * psi2;
        lp
    }
}
