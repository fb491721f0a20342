//! One test per acceptance criterion; each prints a PASS/FAIL line.

use std::time::Instant;

use carmm::cluster::{bivariate_classify, category_counts, classify, exceedance_prob, locality_risk, Category};
use carmm::compare::{elpd_diff_se, fit_report, loo_elpd, TailSmoothing};
use carmm::diagnostics::{summarize, summarize_named, RhatMethod};
use carmm::io::{write_derived, write_posterior, write_summary, Derived};
use carmm::model::{car_logdensity, gmcar_logdensity, mcar_logdensity, CrossPrecision, GmcarParams};
use carmm::simulate::{simulate_study, StudyDesign, TruthSpec};
use carmm::{hmc_fit, FitConfig, Model, ModelSpec, PriorKind, SpatialGraph};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, label: &str, pass: bool, detail: String) {
    println!("criterion {id} {}: {label} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn random_graph(rng: &mut ChaCha8Rng, n_max: usize) -> SpatialGraph {
    let n = rng.random_range(2..=n_max);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    let extra = rng.random_range(0..=n);
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    SpatialGraph::from_edges(&edges, n).unwrap()
}

fn dense_adjacency(g: &SpatialGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            w[(i, j)] = 1.0;
        }
    }
    w
}

/// `D − αW` built densely.
fn dense_car(g: &SpatialGraph, alpha: f64) -> DMatrix<f64> {
    let w = dense_adjacency(g);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(g.n(), (0..g.n()).map(|i| w.row(i).sum())));
    d - w * alpha
}

fn interior_alpha(g: &SpatialGraph, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = g.admissible_alpha();
    let t: f64 = rng.random_range(0.02..0.98);
    lo + t * (hi - lo)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Log-density of `N(0, Q⁻¹)` computed densely.
fn dense_mvn_logpdf(q: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let chol = q.clone().cholesky().expect("precision must be positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let v = DVector::from_column_slice(x);
    let quad = (v.transpose() * q * &v)[(0, 0)];
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * logdet - 0.5 * quad
}

fn dense_logdet(q: &DMatrix<f64>) -> f64 {
    let chol = q.clone().cholesky().expect("positive definite");
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Joint GMCAR precision over `(φ₁, φ₂)`.
fn dense_gmcar_precision(g: &SpatialGraph, p: &GmcarParams) -> DMatrix<f64> {
    let n = g.n();
    let w = dense_adjacency(g);
    let q1 = dense_car(g, p.alpha1) * p.tau1;
    let q2 = dense_car(g, p.alpha2) * p.tau2;
    let a = DMatrix::identity(n, n) * p.eta0 + &w * p.eta1;
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    q.view_mut((0, 0), (n, n)).copy_from(&q1);
    let off = -(&q1 * &a);
    q.view_mut((0, n), (n, n)).copy_from(&off);
    q.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
    let lower = q2 + a.transpose() * &q1 * &a;
    q.view_mut((n, n), (n, n)).copy_from(&lower);
    q
}

#[test]
fn criterion_1_sparse_matches_dense() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_density, mut worst_logdet): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let g = random_graph(&mut rng, 20);
        let n = g.n();
        let params = GmcarParams {
            alpha1: interior_alpha(&g, &mut rng),
            alpha2: interior_alpha(&g, &mut rng),
            eta0: rng.random_range(-1.0..1.0),
            eta1: rng.random_range(-1.0..1.0),
            tau1: rng.random_range(0.2..10.0),
            tau2: rng.random_range(0.2..10.0),
        };
        let phi1 = normals(&mut rng, n);
        let phi2 = normals(&mut rng, n);
        let joint: Vec<f64> = phi1.iter().chain(&phi2).copied().collect();

        let got = gmcar_logdensity(&phi1, &phi2, &params, &g).unwrap();
        let want = dense_mvn_logpdf(&dense_gmcar_precision(&g, &params), &joint);
        worst_density = worst_density.max(rel_err(got, want));

        let alpha = interior_alpha(&g, &mut rng);
        let mcar = GmcarParams::mcar(alpha, params.tau1, params.tau2, params.eta0);
        let got = mcar_logdensity(&phi1, &phi2, alpha, params.tau1, params.tau2, params.eta0, &g).unwrap();
        let want = dense_mvn_logpdf(&dense_gmcar_precision(&g, &mcar), &joint);
        worst_density = worst_density.max(rel_err(got, want));

        let got = car_logdensity(&phi1, alpha, params.tau1, &g).unwrap();
        let want = dense_mvn_logpdf(&(dense_car(&g, alpha) * params.tau1), &phi1);
        worst_density = worst_density.max(rel_err(got, want));

        let got = carmm::car_logdet(&g, alpha, params.tau2).unwrap();
        let want = dense_logdet(&(dense_car(&g, alpha) * params.tau2));
        worst_logdet = worst_logdet.max(rel_err(got, want));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "sparse vs dense oracles",
        worst_density < 1e-9 && worst_logdet < 1e-10 && secs < 60.0,
        format!("max rel density err {worst_density:.2e}, max logdet err {worst_logdet:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_2_gradient_matches_finite_differences() {
    let start = Instant::now();
    let design = StudyDesign {
        rows: 5,
        cols: 5,
        memberships: 40,
        ..StudyDesign::default()
    };
    let truth = TruthSpec::gmcar_covariates();
    let study = simulate_study(&truth, &design, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let model = Model::new(
        study.simulated.data,
        ModelSpec::new(PriorKind::Gmcar, true),
        study.graph,
        study.membership,
    )
    .unwrap();
    let par = model.parameterization();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u: Vec<f64> = (0..par.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let state = par.from_unconstrained(&u);
        let g = model.grad_log_posterior(&state).unwrap();
        let u = par.to_unconstrained(&state).unwrap();
        let mut v = u.clone();
        for k in 0..u.len() {
            v[k] = u[k] + h;
            let up = model.log_density(&v);
            v[k] = u[k] - h;
            let down = model.log_density(&v);
            v[k] = u[k];
            worst = worst.max(rel_err(g[k], (up - down) / (2.0 * h)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "analytic gradient vs central differences",
        worst < 1e-6 && secs < 60.0,
        format!("max relative error {worst:.2e} over 50 states, dim {}, {secs:.1}s", par.dim()),
    );
}

#[test]
fn criterion_3_gmcar_reduces_to_mcar() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = random_graph(&mut rng, 15);
        let n = g.n();
        let alpha = interior_alpha(&g, &mut rng);
        let l11: f64 = rng.random_range(0.3..8.0);
        let l12: f64 = rng.random_range(-3.0..3.0);
        let l22 = l12 * l12 / l11 + rng.random_range(0.3..8.0);
        let lambda = CrossPrecision { l11, l12, l22 };
        let (tau1, tau2, eta0) = lambda.to_conditional().unwrap();
        let phi1 = normals(&mut rng, n);
        let phi2 = normals(&mut rng, n);

        let reduced = GmcarParams {
            alpha1: alpha,
            alpha2: alpha,
            eta0,
            eta1: 0.0,
            tau1,
            tau2,
        };
        let a = gmcar_logdensity(&phi1, &phi2, &reduced, &g).unwrap();
        let b = mcar_logdensity(&phi1, &phi2, alpha, tau1, tau2, eta0, &g).unwrap();
        exact &= a.to_bits() == b.to_bits();

        let r = dense_car(&g, alpha);
        let lam = DMatrix::from_row_slice(2, 2, &[l11, l12, l12, l22]);
        let kron = lam.kronecker(&r);
        let joint: Vec<f64> = phi1.iter().chain(&phi2).copied().collect();
        worst = worst.max(rel_err(b, dense_mvn_logpdf(&kron, &joint)));
    }
    verdict(
        3,
        "GMCAR(η₁=0, α₁=α₂) equals MCAR and the dense Kronecker form",
        exact && worst < 1e-9,
        format!("bitwise equal: {exact}, max rel err vs Λ⊗(D−αW) {worst:.2e}"),
    );
}

#[test]
fn criterion_4_full_conditionals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let g = random_graph(&mut rng, 15);
        let n = g.n();
        let alpha = interior_alpha(&g, &mut rng);
        let tau: f64 = rng.random_range(0.3..8.0);
        let sigma = (dense_car(&g, alpha) * tau).try_inverse().unwrap();
        let phi = normals(&mut rng, n);
        for i in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let s_rr = DMatrix::from_fn(n - 1, n - 1, |a, b| sigma[(rest[a], rest[b])]);
            let s_ir = DVector::from_iterator(n - 1, rest.iter().map(|&j| sigma[(i, j)]));
            let x = DVector::from_iterator(n - 1, rest.iter().map(|&j| phi[j]));
            let chol = s_rr.cholesky().unwrap();
            let mean = s_ir.dot(&chol.solve(&x));
            let var = sigma[(i, i)] - s_ir.dot(&chol.solve(&s_ir));

            let (m, prec) = g.car_full_conditional(&phi, i, alpha, tau);
            let d = g.degrees()[i] as f64;
            let nbr_avg = g.neighbors(i).iter().map(|&j| phi[j]).sum::<f64>() / d;
            worst = worst
                .max(rel_err(m, mean))
                .max(rel_err(prec, 1.0 / var))
                .max(rel_err(alpha * nbr_avg, mean))
                .max(rel_err(tau * d, 1.0 / var));
        }
    }
    verdict(
        4,
        "Brook's lemma full conditionals",
        worst < 1e-10,
        format!("max relative error {worst:.2e} over 50 graphs"),
    );
}

struct Replicate {
    rhats: Vec<(String, f64)>,
    covered: Vec<bool>,
    d_bar: [f64; 2],
    p_d: [f64; 2],
    tail05: [f64; 2],
}

fn recovery_replicate(rep: u64) -> Replicate {
    let truth = TruthSpec::gmcar();
    let design = StudyDesign::default();
    let study = simulate_study(&truth, &design, &mut ChaCha8Rng::seed_from_u64(1000 + rep)).unwrap();
    let data = study.simulated.data.clone();
    let model = Model::new(data.clone(), ModelSpec::new(PriorKind::Gmcar, false), study.graph, study.membership).unwrap();
    let cfg = FitConfig {
        chains: 4,
        iterations: 1500,
        target_accept: 0.9,
        seed: rep,
        ..FitConfig::default()
    };
    let fit = hmc_fit(&model, &cfg).unwrap();
    let report = summarize_named(&fit, &fit.scalar_names(), RhatMethod::Classic);
    let mut rhats = Vec::new();
    let mut covered = Vec::new();
    for (name, value) in truth.scalars() {
        let q = report.get(&name).unwrap();
        rhats.push((name, q.rhat));
        covered.push(q.quantiles[0] <= value && value <= q.quantiles[3]);
    }
    let fr = fit_report(&fit, &data, TailSmoothing::default()).unwrap();
    Replicate {
        rhats,
        covered,
        d_bar: [fr.y1.d_bar / data.n() as f64, fr.y2.d_bar / data.m() as f64],
        p_d: [fr.y1.p_d, fr.y2.p_d],
        tail05: [fr.y1.tap_tail_05, fr.y2.tap_tail_05],
    }
}

#[test]
fn criteria_5_and_6_simulation_recovery_and_fit_quality() {
    let start = Instant::now();
    let reps: Vec<Replicate> = (0..10).map(recovery_replicate).collect();
    let secs = start.elapsed().as_secs_f64();

    let names: Vec<String> = reps[0].rhats.iter().map(|(n, _)| n.clone()).collect();
    let total = reps.len() * names.len();
    let converged = reps.iter().flat_map(|r| &r.rhats).filter(|(_, v)| *v < 1.01).count();
    let coverage: Vec<usize> = (0..names.len())
        .map(|k| reps.iter().filter(|r| r.covered[k]).count())
        .collect();
    for (k, name) in names.iter().enumerate() {
        let worst = reps.iter().map(|r| r.rhats[k].1).fold(0.0, f64::max);
        println!("  {name:7} covered {}/10, max rhat {worst:.4}", coverage[k]);
    }
    let min_cov = *coverage.iter().min().unwrap();
    let pass5 = converged * 10 >= total * 9 && min_cov >= 7 && secs < 1800.0;
    let detail5 = format!("R̂<1.01 for {converged}/{total}, min coverage {min_cov}/10, {secs:.0}s");

    let mut pass6 = true;
    for (i, r) in reps.iter().enumerate() {
        println!(
            "  rep {i}: D̄/n = ({:.3}, {:.3}), p_D = ({:.1}, {:.1}), tail05 = ({:.3}, {:.3})",
            r.d_bar[0], r.d_bar[1], r.p_d[0], r.p_d[1], r.tail05[0], r.tail05[1]
        );
        for k in 0..2 {
            pass6 &= (0.7..=1.5).contains(&r.d_bar[k]) && r.p_d[k] > 0.0 && r.tail05[k] < 0.15;
        }
    }
    let dmin = reps.iter().flat_map(|r| r.d_bar).fold(f64::INFINITY, f64::min);
    let dmax = reps.iter().flat_map(|r| r.d_bar).fold(0.0, f64::max);
    let tmax = reps.iter().flat_map(|r| r.tail05).fold(0.0, f64::max);
    let detail6 = format!("D̄/n in [{dmin:.2}, {dmax:.2}], max tail05 {tmax:.3}");

    println!("criterion 5 {}: simulation recovery ({detail5})", if pass5 { "PASS" } else { "FAIL" });
    verdict(6, "fit-quality sanity", pass6, detail6);
    assert!(pass5, "criterion 5 failed: {detail5}");
}

#[test]
fn criterion_7_clustering_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let levels = [0.5, 1.0, 1.5, 2.0];
    let mut mismatches = 0usize;
    let mut cases = 0usize;
    for _ in 0..200 {
        let g = random_graph(&mut rng, 10);
        let n = g.n();
        let b = rng.random_range(1..=100);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..b)
                .map(|_| (0..n).map(|_| levels[rng.random_range(0..4)]).collect())
                .collect()
        };
        let (d1, d2) = (draw(&mut rng), draw(&mut rng));
        let tr = 1.0;
        let tp: f64 = [0.5, 0.9, 0.95][rng.random_range(0..3)];
        let w = dense_adjacency(&g);

        let mut cats = Vec::new();
        for draws in [&d1, &d2] {
            let pa = exceedance_prob(draws, tr);
            let loc = locality_risk(draws, &g).unwrap();
            let pl = exceedance_prob(&loc, tr);
            let got = classify(&pa, &pl, tp);
            for i in 0..n {
                let mut above = 0;
                let mut loc_above = 0;
                for s in 0..b {
                    above += usize::from(draws[s][i] > tr);
                    let mut sum = 0.0;
                    let mut deg = 0.0;
                    for j in 0..n {
                        sum += w[(i, j)] * draws[s][j];
                        deg += w[(i, j)];
                    }
                    let l = sum / deg;
                    mismatches += usize::from((loc[s][i] - l).abs() > 1e-15);
                    loc_above += usize::from(l > tr);
                }
                let p_area = above as f64 / b as f64;
                let p_loc = loc_above as f64 / b as f64;
                mismatches += usize::from(pa[i] != p_area) + usize::from(pl[i] != p_loc);
                let want = match (p_area > tp, p_loc > tp) {
                    (true, true) => Category::HH,
                    (true, false) => Category::HL,
                    (false, true) => Category::LH,
                    (false, false) => Category::LL,
                };
                mismatches += usize::from(got[i] != want);
                cases += 1;
            }
            cats.push(got);
        }

        let (labels, tab) = bivariate_classify(&cats[0], &cats[1]).unwrap();
        let mut oracle = [[0usize; 4]; 4];
        for i in 0..n {
            let r = Category::ALL.iter().position(|&c| c == cats[0][i]).unwrap();
            let c = Category::ALL.iter().position(|&c| c == cats[1][i]).unwrap();
            oracle[r][c] += 1;
            let hl = |c: Category| if matches!(c, Category::HH | Category::HL) { 'H' } else { 'L' };
            mismatches += usize::from(labels[i].collapsed() != format!("M:{}-P:{}", hl(cats[0][i]), hl(cats[1][i])));
            mismatches += usize::from(labels[i].cell() != format!("{},{}", cats[0][i], cats[1][i]));
        }
        mismatches += usize::from(tab != oracle);
        let rows: Vec<usize> = tab.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<usize> = (0..4).map(|c| tab.iter().map(|r| r[c]).sum()).collect();
        mismatches += usize::from(rows != category_counts(&cats[0]).to_vec());
        mismatches += usize::from(cols != category_counts(&cats[1]).to_vec());
        mismatches += usize::from(rows.iter().sum::<usize>() != n);
    }
    verdict(
        7,
        "clustering vs brute-force oracles",
        mismatches == 0,
        format!("{mismatches} mismatches over {cases} area-outcome cases"),
    );
}

#[test]
fn criterion_8_loo_machinery() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_se: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..50);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..0.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..0.0)).collect();
        let (diff, se) = elpd_diff_se(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        worst_se = worst_se.max(rel_err(diff, d.iter().sum())).max(rel_err(se, (n as f64 * var).sqrt()));
    }

    let mut worst_loo: f64 = 0.0;
    for _ in 0..100 {
        let draws = rng.random_range(1..=5);
        let obs = rng.random_range(1..=3);
        let ll: Vec<Vec<f64>> = (0..draws)
            .map(|_| (0..obs).map(|_| rng.random_range(-4.0..0.0)).collect())
            .collect();
        let r = loo_elpd(&ll, TailSmoothing::Off).unwrap();
        let mut total = 0.0;
        for i in 0..obs {
            // Weights 1/p: Σ w p / Σ w.
            let num: f64 = ll.iter().map(|row| (1.0 / row[i].exp()) * row[i].exp()).sum();
            let den: f64 = ll.iter().map(|row| 1.0 / row[i].exp()).sum();
            let want = (num / den).ln();
            worst_loo = worst_loo.max((r.pointwise[i] - want).abs());
            total += want;
        }
        worst_loo = worst_loo.max((r.elpd_loo - total).abs());
    }
    verdict(
        8,
        "elpd difference SE and raw importance-sampling LOO",
        worst_se < 1e-12 && worst_loo < 1e-12,
        format!("se formula err {worst_se:.2e}, raw IS err {worst_loo:.2e}"),
    );
}

fn fit_outputs(seed: u64) -> Vec<Vec<u8>> {
    let design = StudyDesign {
        rows: 4,
        cols: 4,
        memberships: 20,
        ..StudyDesign::default()
    };
    let study = simulate_study(&TruthSpec::gmcar(), &design, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let model = Model::new(
        study.simulated.data,
        ModelSpec::new(PriorKind::Gmcar, false),
        study.graph,
        study.membership,
    )
    .unwrap();
    let cfg = FitConfig {
        chains: 3,
        iterations: 300,
        seed,
        ..FitConfig::default()
    };
    let fit = hmc_fit(&model, &cfg).unwrap();
    let mut out = Vec::new();
    let mut buf = Vec::new();
    write_posterior(&mut buf, &fit).unwrap();
    out.push(buf);
    for what in Derived::ALL {
        let mut buf = Vec::new();
        write_derived(&mut buf, &fit, what).unwrap();
        out.push(buf);
    }
    let mut buf = Vec::new();
    write_summary(&mut buf, &summarize(&fit).quantities).unwrap();
    out.push(buf);
    out
}

#[test]
fn criterion_9_determinism() {
    let a = fit_outputs(42);
    let b = fit_outputs(42);
    let c = fit_outputs(43);
    let bytes: usize = a.iter().map(Vec::len).sum();
    verdict(
        9,
        "identical seeds give byte-identical outputs",
        a == b && a != c,
        format!("{} files, {bytes} bytes compared; different seed differs: {}", a.len(), a != c),
    );
}
