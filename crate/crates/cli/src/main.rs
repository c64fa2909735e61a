//! `coarse`: command-line front end for the coarse personalization solver.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coarse::benchmarks::{
    ab_test_policy, blanket, segment_then_personalize, standard_arms, KMeansOptions,
};
use coarse::calibrate::{filter_population, fit_population, honest_validate, DEFAULT_BETA_FLOOR};
use coarse::harness::{
    bootstrap_second_step, generate_population, load_arms, load_policy, load_population,
    run_experiment, save_arms, save_policy, save_population, synthesize_arms, BootstrapMethod,
    CovariateSpec, ExperimentSpec, Method, PolicyFile, Resample, SynthConfig,
};
use coarse::lloyd::{
    round_policy_expost, solve_menu, MenuCost, Solution, Solver, SolverConfig, UpdateRule,
};
use coarse::oracle::{grid_solve, refine_solve, speed_benchmark, GridOptions, RefineOptions};
use coarse::surplus::surplus_decomposition;
use coarse::{Error, Population, Problem, SegmentedPolicy, TreatmentSpace};

#[derive(Parser)]
#[command(
    name = "coarse",
    version,
    about = "Coarse personalization of continuous treatments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-promotion population (and optionally arm estimates).
    Synth(SynthArgs),
    /// Fit response curves from per-arm estimates into a population file.
    Fit(FitArgs),
    /// Honest holdout validation of the fitted curves in one dimension.
    Validate(ValidateArgs),
    /// Solve for L treatments with the Lloyd solver.
    Solve(SolveArgs),
    /// Brute-force grid or continuous refinement oracle.
    Oracle(OracleArgs),
    /// Classical segmentation benchmarks, or a Lloyd vs grid timing.
    Benchmark(BenchmarkArgs),
    /// Consumer, producer and total surplus changes of a saved policy.
    Surplus(SurplusArgs),
    /// Second-step bootstrap of a method's total profit.
    Bootstrap(BootstrapArgs),
    /// Run an experiment spec and write the report bundle.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct PopulationArgs {
    /// Population file (id, alpha_d, beta_d, cost_scale_d, optional x_*).
    #[arg(long)]
    population: PathBuf,
    /// Upper treatment bound per dimension.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 20.0])]
    bounds: Vec<f64>,
}

impl PopulationArgs {
    fn load(&self) -> Result<Population> {
        let space = TreatmentSpace::with_bounds(&self.bounds)?;
        load_population(&self.population, &space)
            .with_context(|| format!("reading {}", self.population.display()))
    }
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Number of offered treatments L.
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// `exact` or `barycenter`.
    #[arg(long, default_value = "exact")]
    update: String,
    /// Ex-ante rounding step; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    round_step: f64,
    /// `none`, `linear:<delta>` or `quadratic:<delta>`; selects L up to --segments.
    #[arg(long, default_value = "none")]
    menu_cost: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow a no-treatment cell.
    #[arg(long)]
    holdout: bool,
    /// Evaluate with every intercept set to zero.
    #[arg(long)]
    zero_intercept: bool,
    /// Largest population that gets single-member transfers after Lloyd settles.
    #[arg(long)]
    transfer_limit: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        Ok(SolverConfig {
            num_treatments: self.segments,
            tolerance: self.tol,
            max_iterations: self.max_iter,
            num_starts: self.starts,
            update_rule: self.update.parse::<UpdateRule>()?,
            round_step: self.round_step,
            menu_cost: self.menu_cost.parse::<MenuCost>()?,
            seed: self.seed,
            allow_holdout: self.holdout,
            zero_intercept: self.zero_intercept,
            transfer_limit: self
                .transfer_limit
                .unwrap_or(SolverConfig::default().transfer_limit),
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Omit the covariate columns.
    #[arg(long)]
    no_covariates: bool,
    #[arg(long)]
    output: PathBuf,
    /// Also write noisy per-arm estimates here.
    #[arg(long)]
    arms: Option<PathBuf>,
    /// Standard deviation of the arm-estimate noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Arm-estimate file.
    #[arg(long)]
    arms: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 20.0])]
    bounds: Vec<f64>,
    /// Individuals with every sensitivity at or below this are dropped.
    #[arg(long, default_value_t = DEFAULT_BETA_FLOOR)]
    beta_floor: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    arms: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![5.0, 20.0])]
    bounds: Vec<f64>,
    /// Dimension to validate, numbered from 1.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Write the prediction/holdout pairs here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Round the converged levels to this step afterwards.
    #[arg(long)]
    expost_step: Option<f64>,
    /// Policy file to write.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the winning start's iteration trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[arg(long, default_value_t = 3)]
    segments: usize,
    /// Grid points per dimension; ignored with --refine.
    #[arg(long, default_value_t = 41)]
    grid: usize,
    /// Continuous refinement over dimension compositions instead of the grid.
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    population: PopulationArgs,
    /// kmeans-optimal-levels, kmeans-preferences, kmeans-covariates, abtest or blanket.
    #[arg(long, default_value = "kmeans-optimal-levels")]
    method: String,
    #[arg(long, default_value_t = 5)]
    segments: usize,
    #[arg(long, default_value_t = 3)]
    kmeans_starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time Lloyd against the grid search at --segments instead.
    #[arg(long)]
    speed: bool,
    /// Grid points per dimension for --speed.
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SurplusArgs {
    #[command(flatten)]
    population: PopulationArgs,
    /// Policy file from `solve`, `oracle` or `benchmark`.
    #[arg(long)]
    policy: PathBuf,
    /// Evaluate with every intercept set to zero.
    #[arg(long)]
    zero_intercept: bool,
    /// Per-individual deltas.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// coarse, kmeans-optimal-levels, kmeans-preferences, kmeans-covariates, abtest or blanket.
    #[arg(long, default_value = "coarse")]
    method: String,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 3)]
    kmeans_starts: usize,
    /// Per-replicate profits.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec (TOML key-value file).
    spec: PathBuf,
    /// Directory for the report bundle.
    #[arg(long)]
    output: PathBuf,
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)?
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into something like `head` that closed early.
        Err(err)
            if err.chain().any(|e| {
                e.downcast_ref::<std::io::Error>()
                    .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
            }) =>
        {
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<Error>())
                .map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::Solve(a) => solve(a),
        Command::Oracle(a) => oracle(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Surplus(a) => surplus(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn problem_for(pop: &Population, zero_intercept: bool) -> Problem<'_> {
    if zero_intercept {
        Problem::zero_intercept(pop)
    } else {
        Problem::new(pop)
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::promotions(a.n, a.seed);
    if a.no_covariates {
        cfg.covariates = CovariateSpec::None;
    }
    let pop = generate_population(&cfg)?;
    save_population(&a.output, &pop)?;
    out!("wrote {} individuals to {}", pop.len(), a.output.display());
    if let Some(path) = &a.arms {
        let levels = vec![vec![2.0, 3.0, 4.0, 5.0], vec![5.0, 10.0, 15.0, 20.0]];
        let arms = synthesize_arms(&pop, levels, a.noise, a.seed ^ 0x5eed)?;
        save_arms(path, &arms)?;
        out!("wrote arm estimates to {}", path.display());
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let space = TreatmentSpace::with_bounds(&a.bounds)?;
    let arms =
        load_arms(&a.arms, &space).with_context(|| format!("reading {}", a.arms.display()))?;
    let summary = fit_population(&arms)?;
    let (pop, dropped) = filter_population(
        &summary.individuals,
        &space,
        arms.covariate_names(),
        a.beta_floor,
    )?;
    save_population(&a.output, &pop)?;
    for (d, r2) in summary.mean_r_squared.iter().enumerate() {
        out!("dim {}: mean R² {r2:.4}", d + 1);
    }
    out!("kept {} individuals, dropped {}", pop.len(), dropped.len());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let space = TreatmentSpace::with_bounds(&a.bounds)?;
    let arms =
        load_arms(&a.arms, &space).with_context(|| format!("reading {}", a.arms.display()))?;
    let dim = one_based(a.dim, space.dims())?;
    let v = honest_validate(&arms, dim)?;
    match v.correlation {
        Some(r) => out!(
            "dim {}: {} holdout pairs, correlation {r:.4}",
            a.dim,
            v.pairs.len()
        ),
        None => out!(
            "dim {}: {} holdout pairs, correlation undefined",
            a.dim,
            v.pairs.len()
        ),
    }
    if let Some(path) = &a.output {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "level", "predicted", "truth"])?;
        for p in &v.pairs {
            w.write_record([
                p.id.clone(),
                p.level.to_string(),
                p.predicted.to_string(),
                p.truth.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn one_based(dim: usize, dims: usize) -> Result<usize> {
    if dim == 0 || dim > dims {
        return Err(Error::Config(format!("dimension {dim} is outside 1..={dims}")).into());
    }
    Ok(dim - 1)
}

fn print_policy(
    label: &str,
    policy: &SegmentedPolicy,
    profit: f64,
    regret: f64,
    ceiling: f64,
) -> Result<()> {
    out!(
        "{label}: profit {profit:.6}, regret {regret:.6}, ratio to granular {:.6}",
        profit / ceiling
    );
    let counts = policy.counts();
    for (t, c) in policy.treatments.iter().zip(&counts) {
        out!("  dim {} level {:.6}: {c} members", t.dim + 1, t.value);
    }
    if policy.holdout {
        out!("  holdout: {} members", counts.last().copied().unwrap_or(0));
    }
    Ok(())
}

fn write_policy(
    path: &Path,
    policy: &SegmentedPolicy,
    seed: u64,
    config: serde_json::Value,
) -> Result<()> {
    save_policy(path, &PolicyFile::new(policy, seed, config))?;
    out!("wrote policy to {}", path.display());
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let pop = a.population.load()?;
    let cfg = a.solver.config()?;
    let problem = problem_for(&pop, cfg.zero_intercept);
    let ceiling = problem.granular().total();
    let sol: Solution = if cfg.menu_cost == MenuCost::None {
        Solver::new(&problem, cfg.clone())?.solve()?
    } else {
        let menu = solve_menu(&problem, cfg.num_treatments, &cfg)?;
        for (l, net) in menu.net_profit.iter().enumerate() {
            out!("L={}: net profit {net:.6}", l + 1);
        }
        out!("selected L={}", menu.best_l);
        menu.best().clone()
    };
    print_policy(
        "coarse",
        &sol.policy,
        sol.report.total_profit,
        sol.report.total_regret,
        ceiling,
    )?;
    let mut policy = sol.policy.clone();
    if let Some(step) = a.expost_step {
        let rounded = round_policy_expost(&problem, &sol.policy, step)?;
        print_policy(
            "ex-post rounded",
            &rounded.policy,
            rounded.report.total_profit,
            rounded.report.total_regret,
            ceiling,
        )?;
        policy = rounded.policy;
    }
    if let Some(path) = &a.trace {
        let mut w = BufWriter::new(File::create(path)?);
        for it in &sol.trace.iterations {
            serde_json::to_writer(&mut w, it)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.output {
        write_policy(path, &policy, cfg.seed, serde_json::to_value(&cfg)?)?;
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let pop = a.population.load()?;
    let problem = Problem::new(&pop);
    let ceiling = problem.granular().total();
    let (sol, config) = if a.refine {
        let opts = RefineOptions {
            seed: a.seed,
            ..RefineOptions::default()
        };
        (
            refine_solve(&problem, a.segments, &opts)?,
            serde_json::json!({"oracle": "refine", "segments": a.segments}),
        )
    } else {
        (
            grid_solve(&problem, a.segments, &GridOptions::new(a.grid))?,
            serde_json::json!({"oracle": "grid", "segments": a.segments, "grid": a.grid}),
        )
    };
    print_policy(
        "oracle",
        &sol.policy,
        sol.report.total_profit,
        sol.report.total_regret,
        ceiling,
    )?;
    out!("examined {} candidates", sol.enumerated);
    if let Some(path) = &a.output {
        write_policy(path, &sol.policy, a.seed, config)?;
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let pop = a.population.load()?;
    let problem = Problem::new(&pop);
    let ceiling = problem.granular().total();
    if a.speed {
        let cfg = SolverConfig {
            seed: a.seed,
            ..SolverConfig::default()
        };
        let r = speed_benchmark(&problem, a.segments, a.grid, &cfg)?;
        out!(
            "N={} L={} G={} threads={}: lloyd {:.3} s (profit {:.6}), grid {:.3} s (profit {:.6}), ratio {:.1}x",
            r.individuals, r.treatments, r.points_per_dim, r.threads, r.lloyd_seconds, r.lloyd_profit,
            r.grid_seconds, r.grid_profit, r.ratio
        );
        return Ok(());
    }
    let method: Method = a.method.parse()?;
    let policy = match method {
        Method::Coarse => {
            return Err(Error::Config("use `coarse solve` for the coarse method".into()).into())
        }
        Method::Blanket => {
            let b = blanket(&problem, None)?;
            SegmentedPolicy::from_assignment(vec![b.treatment], vec![0; problem.len()], false)
        }
        Method::AbTest => {
            ab_test_policy(&problem, &standard_arms(pop.space())?, a.segments)?.policy
        }
        m => {
            let opts = KMeansOptions {
                starts: a.kmeans_starts,
                seed: a.seed,
                ..KMeansOptions::default()
            };
            segment_then_personalize(&problem, a.segments, kmeans_feature(m), &opts)?.policy
        }
    };
    let report = problem.report(&policy)?;
    print_policy(
        method.name(),
        &policy,
        report.total_profit,
        report.total_regret,
        ceiling,
    )?;
    if let Some(path) = &a.output {
        let config = serde_json::json!({"method": method.name(), "segments": a.segments});
        write_policy(path, &policy, a.seed, config)?;
    }
    Ok(())
}

fn kmeans_feature(m: Method) -> coarse::benchmarks::Feature {
    use coarse::benchmarks::Feature;
    match m {
        Method::KMeansPreferences => Feature::Preferences,
        Method::KMeansCovariates => Feature::Covariates,
        _ => Feature::OptimalLevels,
    }
}

fn surplus(a: SurplusArgs) -> Result<()> {
    let pop = a.population.load()?;
    let problem = problem_for(&pop, a.zero_intercept);
    let policy = load_policy(&a.policy)
        .with_context(|| format!("reading {}", a.policy.display()))?
        .to_policy()?;
    let r = surplus_decomposition(&problem, &policy)?;
    let o = &r.overall;
    out!(
        "ΔCS {:.6} ({:.2}% positive), ΔPS {:.6} ({:.2}% positive), ΔTS {:.6} ({:.2}% positive)",
        o.consumer,
        o.consumer_positive_pct,
        o.producer,
        o.producer_positive_pct,
        o.total,
        o.total_positive_pct
    );
    for (t, agg) in &r.by_treatment {
        let label = t.map_or("holdout".to_string(), |t| {
            format!("dim {} level {:.6}", t.dim + 1, t.value)
        });
        out!(
            "  {label}: {} members, ΔCS {:.6}, ΔPS {:.6}, ΔTS {:.6}",
            agg.members,
            agg.consumer,
            agg.producer,
            agg.total
        );
    }
    if let Some(path) = &a.output {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "consumer", "producer", "total"])?;
        for (id, d) in pop.ids().iter().zip(&r.individuals) {
            w.write_record([
                id.clone(),
                d.consumer.to_string(),
                d.producer.to_string(),
                d.total.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn bootstrap(a: BootstrapArgs) -> Result<()> {
    let pop = a.population.load()?;
    let cfg = a.solver.config()?;
    let method: Method = a.method.parse()?;
    let l = cfg.num_treatments;
    let bm = match method {
        Method::Coarse => BootstrapMethod::Coarse(cfg.clone()),
        Method::Blanket => BootstrapMethod::Blanket,
        Method::AbTest => BootstrapMethod::AbTest {
            arms: standard_arms(pop.space())?,
            l,
        },
        m => BootstrapMethod::KMeans {
            feature: kmeans_feature(m),
            k: l,
            options: KMeansOptions {
                starts: a.kmeans_starts,
                seed: cfg.seed,
                ..KMeansOptions::default()
            },
        },
    };
    let r = bootstrap_second_step(&pop, a.replicates, &bm, cfg.seed, Resample::WithReplacement)?;
    out!(
        "{} replicates of {}: mean {:.6}, sd {:.6}",
        r.replicates.len(),
        method.name(),
        r.mean,
        r.sd
    );
    if let Some(path) = &a.output {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["replicate", "profit"])?;
        for (i, p) in r.replicates.iter().enumerate() {
            w.write_record([i.to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let spec =
        ExperimentSpec::load(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let bundle = run_experiment(&spec, base)?;
    bundle.write_to(&a.output)?;
    out!(
        "wrote {} files to {}",
        bundle.files.len(),
        a.output.display()
    );
    Ok(())
}
