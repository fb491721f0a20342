//! Fixtures shared by the benchmarks.

use carmm::simulate::{simulate_study, StudyDesign, TruthSpec};
use carmm::{Model, ModelSpec, PriorKind};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Model over a simulated `rows × cols` lattice with `m` memberships.
pub fn lattice_model(rows: usize, cols: usize, m: usize, prior: PriorKind, covariates: bool) -> Model {
    let design = StudyDesign {
        rows,
        cols,
        memberships: m,
        ..StudyDesign::default()
    };
    let truth = TruthSpec::preset(prior, covariates);
    let study = simulate_study(&truth, &design, &mut ChaCha8Rng::seed_from_u64(7)).expect("valid design");
    Model::new(
        study.simulated.data,
        ModelSpec::new(prior, covariates),
        study.graph,
        study.membership,
    )
    .expect("consistent model")
}

/// A fixed interior point of the unconstrained space.
pub fn probe_point(model: &Model) -> Vec<f64> {
    (0..model.parameterization().dim())
        .map(|i| 0.3 * ((i as f64) * 0.7).sin())
        .collect()
}
