//! Map between [`ParameterState`] and the unconstrained vector HMC moves in.
//!
//! Layout: `z₁ (n) | z₂ (n) | α₁ [α₂] | log τ₁ | log τ₂ | η₀ [η₁] | γ₁ | γ₂ | θ₁ (p) | θ₂ (p) | log ψ₁ | log ψ₂`,
//! where the bracketed entries exist for GMCAR only. Each α is a scaled logit onto
//! the admissible interval. The spatial blocks live in the spectral basis of
//! the graph, `φᵘ = B diag(s) z`: modes with `λ < 1` are whitened
//! (`s = (1 − αλ)^{-1/2}`, standard normal prior), while the `λ = 1` modes keep
//! `s = 1` and their `N(0, 1/(1 − α))` prior.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::{ModelSpec, ParameterState, PriorKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Offsets {
    pub phi1: usize,
    pub phi2: usize,
    pub alpha1: usize,
    pub alpha2: Option<usize>,
    pub log_tau1: usize,
    pub log_tau2: usize,
    pub eta0: usize,
    pub eta1: Option<usize>,
    pub gamma1: usize,
    pub gamma2: usize,
    pub theta1: usize,
    pub theta2: usize,
    pub log_psi1: usize,
    pub log_psi2: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    prior: PriorKind,
    n: usize,
    p: usize,
    alpha_bounds: (f64, f64),
    offsets: Offsets,
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
    degrees: Vec<f64>,
    centered: Vec<bool>,
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Parameterization {
    pub fn new(spec: &ModelSpec, graph: &SpatialGraph, p: usize) -> Self {
        let n = graph.n();
        let gm = spec.prior == PriorKind::Gmcar;
        let mut next = 2 * n;
        let mut take = |k: usize| {
            let at = next;
            next += k;
            at
        };
        let alpha1 = take(1);
        let alpha2 = gm.then(|| take(1));
        let log_tau1 = take(1);
        let log_tau2 = take(1);
        let eta0 = take(1);
        let eta1 = gm.then(|| take(1));
        let gamma1 = take(1);
        let gamma2 = take(1);
        let theta1 = take(p);
        let theta2 = take(p);
        let log_psi1 = take(1);
        let log_psi2 = take(1);
        let offsets = Offsets {
            phi1: 0,
            phi2: n,
            alpha1,
            alpha2,
            log_tau1,
            log_tau2,
            eta0,
            eta1,
            gamma1,
            gamma2,
            theta1,
            theta2,
            log_psi1,
            log_psi2,
            dim: next,
        };
        Self {
            prior: spec.prior,
            n,
            p,
            alpha_bounds: spec.alpha_bounds(graph),
            offsets,
            eigenvalues: graph.eigenvalues().to_vec(),
            basis: graph.spectral_basis().clone(),
            degrees: graph.degrees().iter().map(|&d| d as f64).collect(),
            centered: graph.eigenvalues().iter().map(|&l| l >= 1.0).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets.dim
    }

    pub fn prior(&self) -> PriorKind {
        self.prior
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn alpha_bounds(&self) -> (f64, f64) {
        self.alpha_bounds
    }

    pub(crate) fn offsets(&self) -> &Offsets {
        &self.offsets
    }

    pub(crate) fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Whether mode `k` is sampled on its natural (unwhitened) scale.
    pub(crate) fn is_centered(&self, k: usize) -> bool {
        self.centered[k]
    }

    /// `(1 − αλ_k)^{-1/2}` per whitened mode, 1 for centered modes.
    pub(crate) fn mode_scales(&self, alpha: f64) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(&self.centered)
            .map(|(l, &c)| if c { 1.0 } else { 1.0 / (1.0 - alpha * l).sqrt() })
            .collect()
    }

    /// `B diag(s) z`.
    pub(crate) fn color(&self, z: &[f64], scales: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, col) in self.basis.column_iter().enumerate() {
            let w = z[k] * scales[k];
            for (o, b) in out.iter_mut().zip(col.iter()) {
                *o += b * w;
            }
        }
        out
    }

    /// `Bᵀ v`.
    pub(crate) fn project_modes(&self, v: &[f64]) -> Vec<f64> {
        self.basis
            .column_iter()
            .map(|col| col.iter().zip(v).map(|(b, x)| b * x).sum())
            .collect()
    }

    fn whiten(&self, phi_unit: &[f64], alpha: f64) -> Vec<f64> {
        let dphi: Vec<f64> = phi_unit.iter().zip(&self.degrees).map(|(p, d)| p * d).collect();
        self.project_modes(&dphi)
            .into_iter()
            .zip(self.mode_scales(alpha))
            .map(|(v, s)| v / s)
            .collect()
    }

    pub(crate) fn alpha_from_unconstrained(&self, u: f64) -> f64 {
        let (lo, hi) = self.alpha_bounds;
        lo + (hi - lo) * sigmoid(u)
    }

    fn alpha_to_unconstrained(&self, alpha: f64) -> Result<f64> {
        let (lo, hi) = self.alpha_bounds;
        if !(alpha > lo && alpha < hi) {
            return Err(Error::OutOfDomain { name: "alpha", value: alpha });
        }
        let s = (alpha - lo) / (hi - lo);
        Ok((s / (1.0 - s)).ln())
    }

    pub fn to_unconstrained(&self, state: &ParameterState) -> Result<Vec<f64>> {
        let o = &self.offsets;
        if state.phi1_unit.len() != self.n
            || state.phi2_unit.len() != self.n
            || state.beta1.len() != self.p
            || state.beta2.len() != self.p
        {
            return Err(Error::DimensionMismatch("state does not match parameterization".into()));
        }
        if self.prior == PriorKind::Mcar && (state.alpha1 != state.alpha2 || state.eta1 != 0.0) {
            return Err(Error::InvalidParameter(
                "MCAR state requires alpha1 == alpha2 and eta1 == 0".into(),
            ));
        }
        let positive = |name: &'static str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::OutOfDomain { name, value: v })
            }
        };
        let mut u = vec![0.0; o.dim];
        u[o.alpha1] = self.alpha_to_unconstrained(state.alpha1)?;
        if let Some(i) = o.alpha2 {
            u[i] = self.alpha_to_unconstrained(state.alpha2)?;
        }
        u[o.log_tau1] = positive("tau1", state.tau1)?;
        u[o.log_tau2] = positive("tau2", state.tau2)?;
        u[o.eta0] = state.eta0;
        if let Some(i) = o.eta1 {
            u[i] = state.eta1;
        }
        u[o.gamma1] = state.gamma1;
        u[o.gamma2] = state.gamma2;
        u[o.theta1..o.theta1 + self.p].copy_from_slice(&state.beta1);
        u[o.theta2..o.theta2 + self.p].copy_from_slice(&state.beta2);
        u[o.log_psi1] = positive("psi1", state.psi1)?;
        u[o.log_psi2] = positive("psi2", state.psi2)?;
        let z1 = self.whiten(&state.phi1_unit, state.alpha1);
        let z2 = self.whiten(&state.phi2_unit, state.alpha2);
        u[o.phi1..o.phi1 + self.n].copy_from_slice(&z1);
        u[o.phi2..o.phi2 + self.n].copy_from_slice(&z2);
        Ok(u)
    }

    pub fn from_unconstrained(&self, u: &[f64]) -> ParameterState {
        let o = &self.offsets;
        assert_eq!(u.len(), o.dim, "unconstrained vector has the wrong length");
        let alpha1 = self.alpha_from_unconstrained(u[o.alpha1]);
        let alpha2 = o.alpha2.map_or(alpha1, |i| self.alpha_from_unconstrained(u[i]));
        ParameterState {
            phi1_unit: self.color(&u[o.phi1..o.phi1 + self.n], &self.mode_scales(alpha1)),
            phi2_unit: self.color(&u[o.phi2..o.phi2 + self.n], &self.mode_scales(alpha2)),
            alpha1,
            alpha2,
            tau1: u[o.log_tau1].exp(),
            tau2: u[o.log_tau2].exp(),
            eta0: u[o.eta0],
            eta1: o.eta1.map_or(0.0, |i| u[i]),
            gamma1: u[o.gamma1],
            gamma2: u[o.gamma2],
            beta1: u[o.theta1..o.theta1 + self.p].to_vec(),
            beta2: u[o.theta2..o.theta2 + self.p].to_vec(),
            psi1: u[o.log_psi1].exp(),
            psi2: u[o.log_psi2].exp(),
        }
    }

    /// Log-Jacobian of `u ↦ state` on the natural scale, including the
    /// spectral change of basis per effect and the unit-precision
    /// rescaling `−(n/2)(log τ₁ + log τ₂)`.
    pub fn log_jacobian(&self, u: &[f64]) -> f64 {
        let o = &self.offsets;
        let (lo, hi) = self.alpha_bounds;
        let alpha1 = self.alpha_from_unconstrained(u[o.alpha1]);
        let alpha2 = o.alpha2.map_or(alpha1, |i| self.alpha_from_unconstrained(u[i]));
        let half_logdet = |a: f64| -> f64 {
            let whitened: f64 = self
                .eigenvalues
                .iter()
                .zip(&self.centered)
                .filter(|(_, &c)| !c)
                .map(|(l, _)| (1.0 - a * l).ln())
                .sum();
            0.5 * self.degrees.iter().map(|d| d.ln()).sum::<f64>() + 0.5 * whitened
        };
        let alpha_jac = |v: f64| {
            let s = sigmoid(v);
            (hi - lo).ln() + s.ln() + (1.0 - s).ln()
        };
        let mut lj = alpha_jac(u[o.alpha1]);
        if let Some(i) = o.alpha2 {
            lj += alpha_jac(u[i]);
        }
        let half_n = 0.5 * self.n as f64;
        lj += (1.0 - half_n) * (u[o.log_tau1] + u[o.log_tau2]);
        lj += u[o.log_psi1] + u[o.log_psi2];
        lj - half_logdet(alpha1) - half_logdet(alpha2)
    }

    /// Coordinate labels in layout order.
    pub fn coordinate_names(&self) -> Vec<String> {
        let o = &self.offsets;
        let mut names = vec![String::new(); o.dim];
        for i in 0..self.n {
            names[o.phi1 + i] = format!("z1[{i}]");
            names[o.phi2 + i] = format!("z2[{i}]");
        }
        names[o.alpha1] = if o.alpha2.is_some() { "logit_alpha1" } else { "logit_alpha" }.into();
        if let Some(i) = o.alpha2 {
            names[i] = "logit_alpha2".into();
        }
        names[o.log_tau1] = "log_tau1".into();
        names[o.log_tau2] = "log_tau2".into();
        names[o.eta0] = "eta0".into();
        if let Some(i) = o.eta1 {
            names[i] = "eta1".into();
        }
        names[o.gamma1] = "gamma1".into();
        names[o.gamma2] = "gamma2".into();
        for k in 0..self.p {
            names[o.theta1 + k] = format!("theta1[{k}]");
            names[o.theta2 + k] = format!("theta2[{k}]");
        }
        names[o.log_psi1] = "log_psi1".into();
        names[o.log_psi2] = "log_psi2".into();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(prior: PriorKind, p: usize) -> Parameterization {
        let g = SpatialGraph::from_edges(&[(0, 1), (1, 2), (2, 0)], 3).unwrap();
        Parameterization::new(&ModelSpec::new(prior, p > 0), &g, p)
    }

    #[test]
    fn dims() {
        assert_eq!(setup(PriorKind::Gmcar, 2).dim(), 6 + 10 + 4);
        assert_eq!(setup(PriorKind::Mcar, 0).dim(), 6 + 8);
    }

    #[test]
    fn alpha_half_maps_to_zero() {
        let t = setup(PriorKind::Mcar, 0);
        let mut s = ParameterState::baseline(3, 0);
        s.alpha1 = 0.5;
        s.alpha2 = 0.5;
        let u = t.to_unconstrained(&s).unwrap();
        assert_eq!(u[t.offsets().alpha1], 0.0);
        // τ = ψ = 1 map to 0 and contribute nothing beyond the α term.
        assert_eq!(u[t.offsets().log_tau1], 0.0);
        assert_eq!(t.from_unconstrained(&u), s);
    }

    #[test]
    fn out_of_domain() {
        let t = setup(PriorKind::Mcar, 0);
        let mut s = ParameterState::baseline(3, 0);
        s.alpha1 = 1.2;
        s.alpha2 = 1.2;
        assert!(matches!(t.to_unconstrained(&s), Err(Error::OutOfDomain { name: "alpha", .. })));
        s.alpha1 = 0.5;
        s.alpha2 = 0.5;
        s.tau2 = -1.0;
        assert!(matches!(t.to_unconstrained(&s), Err(Error::OutOfDomain { name: "tau2", .. })));
    }

    #[test]
    fn names_cover_layout() {
        let t = setup(PriorKind::Gmcar, 1);
        assert!(t.coordinate_names().iter().all(|s| !s.is_empty()));
    }

    proptest! {
        #[test]
        fn round_trip(u in proptest::collection::vec(-4.0f64..4.0, 20)) {
            let t = setup(PriorKind::Gmcar, 2);
            let state = t.from_unconstrained(&u);
            let back = t.to_unconstrained(&state).unwrap();
            for (a, b) in u.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
