mod config;
mod output;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use carmm::compare::{elpd_diff_se, fit_report, FitReport};
use carmm::diagnostics::{summarize_draws, summarize_named, DiagnosticsReport, RhatMethod};
use carmm::io::{self, Derived};
use carmm::simulate::{simulate_study, TruthSpec};
use carmm::{cluster, hmc_fit, Model, ModelSpec, PriorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::{resolve, FileConfig, InputPaths, AREAL_FILE, GRAPH_FILE, MEMBERSHIP_FILE, MM_FILE};
use output::{hash_inputs, OutDir};

/// Argument combinations clap cannot check; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "carmm", version, about = "Bivariate CAR disease mapping with multiple-membership data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study in the formats `fit` reads.
    Simulate(SimulateArgs),
    /// Run HMC and write draws, derived quantities, summaries and fit statistics.
    Fit(FitArgs),
    /// Recompute convergence summaries from a fit directory.
    Diagnose(DiagnoseArgs),
    /// Paired elpd difference between two fit directories.
    Compare(CompareArgs),
    /// Exceedance-probability clustering from a fit directory.
    Cluster(ClusterArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Gmcar,
    Mcar,
}

impl From<ModelArg> for PriorKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gmcar => PriorKind::Gmcar,
            ModelArg::Mcar => PriorKind::Mcar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct ModelFlags {
    /// Spatial prior.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Whether areal covariates enter both linear predictors.
    #[arg(long, value_enum)]
    covariates: Option<Switch>,
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ModelFlags {
    fn prior(&self, cfg: &FileConfig) -> PriorKind {
        self.model.map(PriorKind::from).or(cfg.model).unwrap_or(PriorKind::Gmcar)
    }

    fn covariates(&self, cfg: &FileConfig) -> bool {
        self.covariates
            .map(|s| matches!(s, Switch::On))
            .or(cfg.covariates)
            .unwrap_or(false)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct InputArgs {
    /// Directory holding graph.csv, membership.csv, areal_data.csv and mm_data.csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    membership: Option<PathBuf>,
    #[arg(long)]
    areal_data: Option<PathBuf>,
    #[arg(long)]
    mm_data: Option<PathBuf>,
    /// Age-stratified table replacing the areal offsets E1.
    #[arg(long)]
    areal_age_table: Option<PathBuf>,
    /// Age-stratified table replacing the membership offsets E2.
    #[arg(long)]
    mm_age_table: Option<PathBuf>,
}

impl InputArgs {
    fn paths(&self) -> Result<InputPaths, UsageError> {
        let d = self.data_dir.as_deref();
        Ok(InputPaths {
            graph: resolve(d, self.graph.as_deref(), GRAPH_FILE, "--graph")?,
            membership: resolve(d, self.membership.as_deref(), MEMBERSHIP_FILE, "--membership")?,
            areal_data: resolve(d, self.areal_data.as_deref(), AREAL_FILE, "--areal-data")?,
            mm_data: resolve(d, self.mm_data.as_deref(), MM_FILE, "--mm-data")?,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Iterations per chain, warm-up included.
    #[arg(long)]
    iters: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
    /// Report the rank-normalized R̂ instead of the classic split R̂.
    #[arg(long)]
    rank_normalized: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Where to write summary.csv; defaults to the fit directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rank_normalized: bool,
}

#[derive(Args)]
struct CompareArgs {
    fit_a: PathBuf,
    fit_b: PathBuf,
    /// Directory for compare.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Relative-risk threshold T_R.
    #[arg(long)]
    tr: Option<f64>,
    /// Probability threshold T_P.
    #[arg(long)]
    tp: Option<f64>,
    /// GeoJSON FeatureCollection with an `area` property per feature.
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Compare(a) => compare(a),
        Command::Cluster(a) => run_cluster(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<carmm::Error>() {
            return if err.is_data_error() { 3 } else { 4 };
        }
    }
    3
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CARMM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("CARMM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = FileConfig::load(args.model.config.as_deref())?;
    let prior = args.model.prior(&cfg);
    let covariates = args.model.covariates(&cfg);
    let truth = cfg.truth.clone().unwrap_or_else(|| TruthSpec::preset(prior, covariates));
    let design = cfg.design.unwrap_or_default();
    let study = simulate_study(&truth, &design, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let data = &study.simulated.data;

    let mut out = OutDir::create(&args.out)?;
    out.write_with(GRAPH_FILE, |w| Ok(io::write_edges(w, &study.graph)?))?;
    out.write_with(MEMBERSHIP_FILE, |w| Ok(io::write_weights(w, &study.membership)?))?;
    out.write_with(AREAL_FILE, |w| Ok(io::write_areal_data(w, data)?))?;
    out.write_with(MM_FILE, |w| Ok(io::write_mm_data(w, data)?))?;
    out.write_json(
        "truth.json",
        &json!({
            "seed": args.seed,
            "design": design,
            "truth": truth,
            "phi1": study.simulated.phi1,
            "phi2": study.simulated.phi2,
        }),
    )?;
    println!(
        "simulated {} areas, {} memberships ({} prior{}) into {}",
        data.n(),
        data.m(),
        match truth.prior {
            PriorKind::Gmcar => "GMCAR",
            PriorKind::Mcar => "MCAR",
        },
        if truth.covariates { ", covariates" } else { "" },
        args.out.display()
    );
    out.finish(
        "simulate",
        json!({ "seed": args.seed, "design": design, "truth": truth }),
        BTreeMap::new(),
    )
}

fn fit(args: FitArgs) -> Result<()> {
    let cfg = FileConfig::load(args.model.config.as_deref())?;
    let paths = args.inputs.paths()?;
    let (graph, membership, mut data) =
        io::read_inputs(&paths.graph, &paths.membership, &paths.areal_data, &paths.mm_data)?;
    let mut hashed = vec![
        ("graph", paths.graph.as_path()),
        ("membership", paths.membership.as_path()),
        ("areal_data", paths.areal_data.as_path()),
        ("mm_data", paths.mm_data.as_path()),
    ];
    if let Some(p) = &args.inputs.areal_age_table {
        data.e1 = offsets_from(p, data.n())?;
        hashed.push(("areal_age_table", p));
    }
    if let Some(p) = &args.inputs.mm_age_table {
        data.e2 = offsets_from(p, data.m())?;
        hashed.push(("mm_age_table", p));
    }
    if let Some(p) = &args.model.config {
        hashed.push(("config", p));
    }
    let inputs = hash_inputs(&hashed)?;

    let mut spec = ModelSpec::new(args.model.prior(&cfg), args.model.covariates(&cfg));
    if let Some(c) = cfg.alpha_constraint {
        spec.alpha_constraint = c;
    }
    if let Some(h) = cfg.hyperpriors {
        spec.hyperpriors = h;
    }
    let mut fit_cfg = cfg.fit.unwrap_or_default();
    if let Some(s) = args.seed {
        fit_cfg.seed = s;
    }
    if let Some(c) = args.chains {
        fit_cfg.chains = c;
    }
    if let Some(i) = args.iters {
        fit_cfg.iterations = i;
    }
    let smoothing = cfg.loo_smoothing.unwrap_or_default();
    let method = rhat_method(args.rank_normalized || cfg.rank_normalized_rhat.unwrap_or(false));

    let model = Model::new(data.clone(), spec, graph, membership)?;
    let samples = hmc_fit(&model, &fit_cfg)?;
    for w in samples.warnings() {
        eprintln!("warning: {w}");
    }
    let summary = summarize_named(&samples, &samples.parameter_names(), method);
    let report = fit_report(&samples, &data, smoothing)?;

    let mut out = OutDir::create(&args.out)?;
    out.write_with("posterior.csv", |w| Ok(io::write_posterior(w, &samples)?))?;
    for what in Derived::ALL {
        out.write_with(what.file_name(), |w| Ok(io::write_derived(w, &samples, what)?))?;
    }
    out.write_with("summary.csv", |w| Ok(io::write_summary(w, &summary.quantities)?))?;
    out.write_json("fit_report.json", &report)?;
    let stats: Vec<_> = samples.chains.iter().map(|c| &c.stats).collect();
    out.write_json("chains.json", &stats)?;

    print_fit(&summary, &report);
    out.finish(
        "fit",
        json!({
            "inputs": paths,
            "model": spec,
            "fit": fit_cfg,
            "seed": fit_cfg.seed,
            "loo_smoothing": smoothing,
            "rhat_method": method,
        }),
        inputs,
    )
}

fn offsets_from(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let e = io::read_age_table(path)?;
    if e.len() != expected {
        return Err(carmm::Error::Parse {
            path: path.display().to_string(),
            row: 0,
            message: format!("table covers {} units, data has {expected}", e.len()),
        }
        .into());
    }
    Ok(e)
}

fn rhat_method(rank: bool) -> RhatMethod {
    if rank {
        RhatMethod::RankNormalized
    } else {
        RhatMethod::Classic
    }
}

fn print_fit(summary: &DiagnosticsReport, report: &FitReport) {
    let flagged = summary.quantities.iter().filter(|q| q.rhat > 1.01).count();
    println!(
        "{} quantities summarized; {flagged} with R-hat > 1.01 (max {:.4})",
        summary.quantities.len(),
        summary.max_rhat()
    );
    for (label, r) in [("y1", &report.y1), ("y2", &report.y2)] {
        println!(
            "{label}: DIC {:.2} (p_D {:.2}), looic {:.2}, TAP tails {:.3}/{:.3}, {} high Pareto k",
            r.dic, r.p_d, r.looic, r.tap_tail_05, r.tap_tail_10, r.high_pareto_k
        );
    }
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let posterior = args.fit.join("posterior.csv");
    let table = io::read_posterior(&posterior)?;
    let method = rhat_method(args.rank_normalized);
    let summary = summarize_draws(
        table.names.iter().map(String::as_str).zip(table.draws.iter().map(Vec::as_slice)),
        method,
    );
    let out_dir = args.out.unwrap_or_else(|| args.fit.clone());
    let mut out = OutDir::create(&out_dir)?;
    out.write_with("summary.csv", |w| Ok(io::write_summary(w, &summary.quantities)?))?;

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "{:<14} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}", "name", "mean", "sd", "q2.5", "q97.5", "rhat", "ess")?;
    for q in &summary.quantities {
        writeln!(
            w,
            "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.4} {:>8.0}",
            q.name, q.mean, q.sd, q.quantiles[0], q.quantiles[3], q.rhat, q.ess_bulk
        )?;
    }
    let flagged = summary.quantities.iter().filter(|q| q.rhat > 1.01).count();
    writeln!(w, "{flagged} of {} quantities with R-hat > 1.01", summary.quantities.len())?;
    Ok(())
}

fn read_report(dir: &Path) -> Result<FitReport> {
    let path = dir.join("fit_report.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        carmm::Error::Parse {
            path: path.display().to_string(),
            row: e.line(),
            message: e.to_string(),
        }
        .into()
    })
}

fn compare(args: CompareArgs) -> Result<()> {
    let a = read_report(&args.fit_a)?;
    let b = read_report(&args.fit_b)?;
    let mut rows = Vec::new();
    for (label, ra, rb) in [("y1", &a.y1, &b.y1), ("y2", &a.y2, &b.y2)] {
        let (diff, se) = elpd_diff_se(&ra.pointwise_elpd, &rb.pointwise_elpd)?;
        rows.push(format!(
            "{label},{},{},{diff},{se},{},{},{},{}",
            ra.elpd_loo, rb.elpd_loo, ra.looic, rb.looic, ra.dic, rb.dic
        ));
    }
    let header = "outcome,elpd_a,elpd_b,elpd_diff,se_diff,looic_a,looic_b,dic_a,dic_b";
    println!("{header}");
    for r in &rows {
        println!("{r}");
    }
    if let Some(dir) = &args.out {
        let mut out = OutDir::create(dir)?;
        out.write_with("compare.csv", |w| {
            writeln!(w, "{header}")?;
            for r in &rows {
                writeln!(w, "{r}")?;
            }
            Ok(())
        })?;
        let inputs = hash_inputs(&[
            ("fit_a", &args.fit_a.join("fit_report.json")),
            ("fit_b", &args.fit_b.join("fit_report.json")),
        ])?;
        out.finish("compare", json!({ "fit_a": args.fit_a, "fit_b": args.fit_b }), inputs)?;
    }
    Ok(())
}

/// Flattens chains × iterations × index into draws × index.
fn pooled(draws: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    draws.into_iter().flatten().collect()
}

fn run_cluster(args: ClusterArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let (tr, tp) = cfg.thresholds(args.tr, args.tp);
    if !(tr > 0.0) || !(0.0..1.0).contains(&tp) {
        bail!(UsageError(format!("need T_R > 0 and 0 ≤ T_P < 1, got {tr} and {tp}")));
    }
    let graph_path = resolve(args.data_dir.as_deref(), args.graph.as_deref(), GRAPH_FILE, "--graph")?;
    let rho_path = args.fit.join(Derived::Rho1.file_name());
    let zeta_path = args.fit.join(Derived::Zeta2.file_name());
    let rho1 = pooled(io::read_derived(&rho_path)?);
    let risk2: Vec<Vec<f64>> = pooled(io::read_derived(&zeta_path)?)
        .into_iter()
        .map(|row| row.into_iter().map(f64::exp).collect())
        .collect();
    let n = rho1.first().map_or(0, Vec::len);
    let graph = io::read_graph(&graph_path, n)?;
    let report = cluster::cluster_from_draws(&rho1, &risk2, &graph, tr, tp)?;

    let mut hashed = vec![
        ("graph", graph_path.as_path()),
        ("rho1", rho_path.as_path()),
        ("zeta2", zeta_path.as_path()),
    ];
    let mut out = OutDir::create(&args.out)?;
    out.write_with("clusters.csv", |w| Ok(io::write_clusters(w, &report)?))?;
    out.write_with("bivariate.csv", |w| Ok(io::write_bivariate(w, &report)?))?;
    if let Some(b) = &args.boundaries {
        let text = std::fs::read_to_string(b).with_context(|| format!("reading {}", b.display()))?;
        let joined = io::geojson_join(&text, &report)?;
        out.write_with("clusters.geojson", |w| Ok(w.write_all(joined.as_bytes())?))?;
        hashed.push(("boundaries", b));
    }
    for oc in [&report.y1, &report.y2] {
        let counts = cluster::category_counts(&oc.categories);
        let cells: Vec<String> = cluster::Category::ALL
            .iter()
            .zip(counts)
            .map(|(c, k)| format!("{c} {k}"))
            .collect();
        println!("{}: {}", oc.outcome.label(), cells.join(", "));
    }
    let inputs = hash_inputs(&hashed)?;
    out.finish("cluster", json!({ "tr": tr, "tp": tp }), inputs)
}
