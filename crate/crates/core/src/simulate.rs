//! Synthetic datasets from GMCAR / MCAR multiple-membership models.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::membership::MembershipMatrix;
use crate::model::negbin::{sample_negbin, MU_FLOOR};
use crate::model::{preprocess_covariates, Dataset, GmcarParams, ParameterState, PriorKind};

/// Exact sampler for `N(0, [τ(D − αW)]⁻¹)` through a dense Cholesky factor.
#[derive(Debug, Clone)]
pub struct CarSampler {
    /// Lower factor `L` of the precision `LLᵀ`.
    factor: DMatrix<f64>,
}

impl CarSampler {
    pub fn new(graph: &SpatialGraph, alpha: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        let (lo, hi) = graph.admissible_alpha();
        if !(alpha > lo && alpha < hi) {
            return Err(Error::NotPositiveDefinite);
        }
        let n = graph.n();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = tau * graph.degrees()[i] as f64;
        }
        for &(a, b) in graph.edges() {
            q[(a, b)] = -tau * alpha;
            q[(b, a)] = -tau * alpha;
        }
        let chol = q.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { factor: chol.l() })
    }

    /// Solves `Lᵀx = z` for standard normal `z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.nrows();
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let x = self
            .factor
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        x.iter().copied().collect()
    }
}

pub fn sample_gmrf<R: Rng + ?Sized>(graph: &SpatialGraph, alpha: f64, tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CarSampler::new(graph, alpha, tau)?.sample(rng))
}

/// `φ₂` from its marginal CAR, then `φ₁ = (η₀I + η₁W)φ₂ + ε` with `ε` from the
/// conditional CAR.
pub fn sample_gmcar<R: Rng + ?Sized>(graph: &SpatialGraph, params: &GmcarParams, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let phi2 = sample_gmrf(graph, params.alpha2, params.tau2, rng)?;
    let eps = sample_gmrf(graph, params.alpha1, params.tau1, rng)?;
    let w = graph.neighbor_sum(&phi2);
    let phi1 = (0..graph.n())
        .map(|i| params.eta0 * phi2[i] + params.eta1 * w[i] + eps[i])
        .collect();
    Ok((phi1, phi2))
}

/// True parameter values for a simulation study. Coefficients act on
/// min-max normalized covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub prior: PriorKind,
    pub covariates: bool,
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

impl TruthSpec {
    /// GMCAR without covariates.
    pub fn gmcar() -> Self {
        Self {
            prior: PriorKind::Gmcar,
            covariates: false,
            alpha1: 0.40,
            alpha2: 0.90,
            tau1: 6.0,
            tau2: 4.0,
            eta0: 0.30,
            eta1: 0.50,
            gamma1: 0.50,
            gamma2: 1.30,
            beta1: Vec::new(),
            beta2: Vec::new(),
            psi1: 20.0,
            psi2: 10.0,
        }
    }

    /// MCAR without covariates.
    pub fn mcar() -> Self {
        Self {
            prior: PriorKind::Mcar,
            alpha2: 0.40,
            eta1: 0.0,
            ..Self::gmcar()
        }
    }

    /// GMCAR with two covariates.
    pub fn gmcar_covariates() -> Self {
        Self {
            covariates: true,
            alpha2: 0.20,
            gamma1: -0.30,
            gamma2: -0.50,
            beta1: vec![0.3, 0.5],
            beta2: vec![1.0, 1.0],
            ..Self::gmcar()
        }
    }

    /// MCAR with two covariates.
    pub fn mcar_covariates() -> Self {
        Self {
            prior: PriorKind::Mcar,
            alpha2: 0.40,
            eta1: 0.0,
            ..Self::gmcar_covariates()
        }
    }

    pub fn preset(prior: PriorKind, covariates: bool) -> Self {
        match (prior, covariates) {
            (PriorKind::Gmcar, false) => Self::gmcar(),
            (PriorKind::Mcar, false) => Self::mcar(),
            (PriorKind::Gmcar, true) => Self::gmcar_covariates(),
            (PriorKind::Mcar, true) => Self::mcar_covariates(),
        }
    }

    pub fn p(&self) -> usize {
        self.beta1.len()
    }

    pub fn gmcar_params(&self) -> GmcarParams {
        GmcarParams {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            eta0: self.eta0,
            eta1: self.eta1,
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }

    pub fn validate(&self, graph: &SpatialGraph) -> Result<()> {
        let (lo, hi) = graph.admissible_alpha();
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a > lo && a < hi) {
                return Err(Error::OutOfDomain { name, value: a });
            }
        }
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2), ("psi1", self.psi1), ("psi2", self.psi2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::OutOfDomain { name, value: v });
            }
        }
        if self.prior == PriorKind::Mcar && (self.alpha1 != self.alpha2 || self.eta1 != 0.0) {
            return Err(Error::InvalidParameter("MCAR truth needs alpha1 = alpha2 and eta1 = 0".into()));
        }
        if self.beta1.len() != self.beta2.len() || self.covariates != (self.p() > 0) {
            return Err(Error::InvalidParameter("coefficient vectors disagree with the covariate flag".into()));
        }
        Ok(())
    }

    /// Named scalar values in the order and naming used by posterior summaries.
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = match self.prior {
            PriorKind::Gmcar => vec![
                ("alpha1".into(), self.alpha1),
                ("alpha2".into(), self.alpha2),
                ("tau1".into(), self.tau1),
                ("tau2".into(), self.tau2),
                ("eta0".into(), self.eta0),
                ("eta1".into(), self.eta1),
            ],
            PriorKind::Mcar => vec![
                ("alpha".into(), self.alpha1),
                ("tau1".into(), self.tau1),
                ("tau2".into(), self.tau2),
                ("eta0".into(), self.eta0),
            ],
        };
        out.extend([
            ("gamma1".into(), self.gamma1),
            ("gamma2".into(), self.gamma2),
            ("psi1".into(), self.psi1),
            ("psi2".into(), self.psi2),
        ]);
        for (outcome, beta) in [(1, &self.beta1), (2, &self.beta2)] {
            for (k, b) in beta.iter().enumerate() {
                out.push((format!("beta{outcome}[{k}]"), *b));
            }
        }
        out
    }

    /// Parameter state at these truths with the given natural-scale effects.
    pub fn to_state(&self, phi1: &[f64], phi2: &[f64], graph: &SpatialGraph) -> ParameterState {
        let mut s = ParameterState {
            phi1_unit: Vec::new(),
            phi2_unit: Vec::new(),
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            tau1: self.tau1,
            tau2: self.tau2,
            eta0: self.eta0,
            eta1: self.eta1,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            beta1: self.beta1.clone(),
            beta2: self.beta2.clone(),
            psi1: self.psi1,
            psi2: self.psi2,
        };
        s.set_spatial_effects(phi1, phi2, graph);
        s
    }
}

/// Rook-adjacency grid with areas numbered row-major.
pub fn make_lattice(rows: usize, cols: usize) -> Result<SpatialGraph> {
    if rows * cols < 2 {
        return Err(Error::InvalidParameter(format!("a {rows}x{cols} lattice has fewer than two areas")));
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    SpatialGraph::from_edges(&edges, rows * cols)
}

/// Random memberships: each unit covers a connected neighbourhood of a random
/// seed area, of size `1 + Binomial(n − 1, (s − 1)/(n − 1))` for mean size `s`,
/// with Dirichlet(1) weights.
pub fn make_membership<R: Rng + ?Sized>(m: usize, graph: &SpatialGraph, sparsity: f64, rng: &mut R) -> Result<MembershipMatrix> {
    let n = graph.n();
    if m == 0 {
        return Err(Error::InvalidParameter("at least one membership is required".into()));
    }
    if !(1.0..=n as f64).contains(&sparsity) {
        return Err(Error::InvalidParameter(format!(
            "mean support size must lie in [1, {n}], got {sparsity}"
        )));
    }
    let extra = Binomial::new((n - 1) as u64, (sparsity - 1.0) / (n - 1) as f64)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut triplets = Vec::new();
    for j in 0..m {
        let size = 1 + extra.sample(rng) as usize;
        let seed = rng.random_range(0..n);
        let support = bfs_prefix(graph, seed, size);
        let raw: Vec<f64> = support.iter().map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        for (&i, w) in support.iter().zip(&raw) {
            triplets.push((j, i, w / total));
        }
    }
    MembershipMatrix::from_triplets(&triplets, m, n, true)
}

fn bfs_prefix(graph: &SpatialGraph, seed: usize, size: usize) -> Vec<usize> {
    let mut seen = vec![false; graph.n()];
    let mut out = Vec::with_capacity(size);
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    while let Some(i) = queue.pop_front() {
        out.push(i);
        if out.len() == size {
            break;
        }
        for &j in graph.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    out
}

/// Offsets drawn log-uniformly on `[lo, hi]`.
pub fn log_uniform_offsets<R: Rng + ?Sized>(len: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..len).map(|_| (a + (b - a) * rng.random::<f64>()).exp()).collect()
}

pub fn uniform_covariates<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub data: Dataset,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

/// Draws effects at the truth, then counts `NegBin(E·ρ, ψ)` for both outcomes.
pub fn generate_with_effects<R: Rng + ?Sized>(
    truth: &TruthSpec,
    graph: &SpatialGraph,
    h: &MembershipMatrix,
    x: Option<&DMatrix<f64>>,
    e1: &[f64],
    e2: &[f64],
    rng: &mut R,
) -> Result<SimulatedData> {
    truth.validate(graph)?;
    let n = graph.n();
    if h.n() != n || e1.len() != n || e2.len() != h.m() {
        return Err(Error::DimensionMismatch("offsets, membership and graph disagree".into()));
    }
    let fixed = match (truth.covariates, x) {
        (true, Some(x)) => {
            if x.nrows() != n || x.ncols() != truth.p() {
                return Err(Error::DimensionMismatch(format!(
                    "covariates are {}x{}, expected {n}x{}",
                    x.nrows(),
                    x.ncols(),
                    truth.p()
                )));
            }
            let xn = preprocess_covariates(x)?.normalize(x)?;
            let b1 = &xn * DVector::from_column_slice(&truth.beta1);
            let b2 = &xn * DVector::from_column_slice(&truth.beta2);
            Some((b1, b2))
        }
        (true, None) => return Err(Error::InvalidConfig("covariate truth needs a covariate matrix".into())),
        (false, _) => None,
    };
    let (phi1, phi2) = sample_gmcar(graph, &truth.gmcar_params(), rng)?;
    let mut log_rho1: Vec<f64> = phi1.iter().map(|p| truth.gamma1 + p).collect();
    let mut zeta2: Vec<f64> = phi2.iter().map(|p| truth.gamma2 + p).collect();
    if let Some((b1, b2)) = &fixed {
        for i in 0..n {
            log_rho1[i] += b1[i];
            zeta2[i] += b2[i];
        }
    }
    let log_rho2 = h.project(&zeta2)?;
    let y1 = log_rho1
        .iter()
        .zip(e1)
        .map(|(l, e)| sample_negbin(rng, (e * l.exp()).max(MU_FLOOR), truth.psi1))
        .collect();
    let y2 = log_rho2
        .iter()
        .zip(e2)
        .map(|(l, e)| sample_negbin(rng, (e * l.exp()).max(MU_FLOOR), truth.psi2))
        .collect();
    Ok(SimulatedData {
        data: Dataset {
            y1,
            e1: e1.to_vec(),
            y2,
            e2: e2.to_vec(),
            x: if truth.covariates { x.cloned() } else { None },
        },
        phi1,
        phi2,
    })
}

pub fn generate_dataset<R: Rng + ?Sized>(
    truth: &TruthSpec,
    graph: &SpatialGraph,
    h: &MembershipMatrix,
    x: Option<&DMatrix<f64>>,
    e1: &[f64],
    e2: &[f64],
    rng: &mut R,
) -> Result<Dataset> {
    generate_with_effects(truth, graph, h, x, e1, e2, rng).map(|s| s.data)
}

/// Layout of a full synthetic study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyDesign {
    pub rows: usize,
    pub cols: usize,
    pub memberships: usize,
    /// Mean number of areas per membership.
    pub sparsity: f64,
    pub offset_low: f64,
    pub offset_high: f64,
}

impl Default for StudyDesign {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            memberships: 130,
            sparsity: 8.0,
            offset_low: 5.0,
            offset_high: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Study {
    pub graph: SpatialGraph,
    pub membership: MembershipMatrix,
    pub truth: TruthSpec,
    pub simulated: SimulatedData,
}

/// Lattice, memberships, offsets, covariates and counts from one generator.
pub fn simulate_study<R: Rng + ?Sized>(truth: &TruthSpec, design: &StudyDesign, rng: &mut R) -> Result<Study> {
    let graph = make_lattice(design.rows, design.cols)?;
    let membership = make_membership(design.memberships, &graph, design.sparsity, rng)?;
    let e1 = log_uniform_offsets(graph.n(), design.offset_low, design.offset_high, rng);
    let e2 = log_uniform_offsets(design.memberships, design.offset_low, design.offset_high, rng);
    let x = truth.covariates.then(|| uniform_covariates(graph.n(), truth.p(), rng));
    let simulated = generate_with_effects(truth, &graph, &membership, x.as_ref(), &e1, &e2, rng)?;
    Ok(Study {
        graph,
        membership,
        truth: truth.clone(),
        simulated,
    })
}
