//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::time::Instant;

use coarse::granular::{optimal_treatment, Problem};
use coarse::harness::{
    generate_population, run_experiment, CovariateSpec, ExperimentSpec, Method, SynthConfig,
};
use coarse::lloyd::{foc_residual, FocStatus, Solver, SolverConfig, UpdateRule};
use coarse::model::{Individual, Population, SegmentedPolicy, TreatmentSpace};
use coarse::numeric::golden_section_max;
use coarse::oracle::{grid_solve, refine_solve, speed_benchmark, GridOptions, RefineOptions};
use coarse::surplus::surplus_decomposition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn synth(n: usize, seed: u64) -> Population {
    let mut cfg = SynthConfig::promotions(n, seed);
    cfg.covariates = CovariateSpec::None;
    generate_population(&cfg).expect("valid preset")
}

fn closed_form_optimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let alpha = rng.random_range(-2.0..2.0);
        let beta = rng.random_range(0.0..10.0);
        let s = rng.random_range(0.05..5.0);
        let upper = rng.random_range(0.5..30.0);
        let ind = Individual::new("x", vec![alpha], vec![beta], vec![s]);
        let v = ind.view();
        let closed = optimal_treatment(&v, 0, upper);
        let numeric = golden_section_max(|x, y| v.profit_diff(0, x, y), 0.0, upper, 1e-11);
        worst = worst.max((closed - numeric).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-8 && secs < 1.0,
        format!("max |closed − golden| = {worst:.2e}, {secs:.3} s"),
        format!("max deviation {worst:.2e}, {secs:.3} s"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst_grid: f64 = f64::INFINITY;
    let mut worst_rel: f64 = 0.0;
    for k in 0..20u64 {
        let n = 10 + (k as usize * 7) % 21;
        let pop = synth(n, 100 + k);
        let problem = Problem::new(&pop);
        for l in 1..=3 {
            let cfg = SolverConfig {
                num_starts: 10,
                update_rule: UpdateRule::Exact,
                seed: k,
                ..SolverConfig::default()
            }
            .with_treatments(l);
            let lloyd = Solver::new(&problem, cfg)
                .unwrap()
                .solve()
                .unwrap()
                .report
                .total_profit;
            let grid = grid_solve(&problem, l, &GridOptions::new(41))
                .unwrap()
                .report
                .total_profit;
            let refine = refine_solve(&problem, l, &RefineOptions::default())
                .unwrap()
                .report
                .total_profit;
            worst_grid = worst_grid.min(lloyd - grid);
            worst_rel = worst_rel.max((refine - lloyd) / refine.abs().max(1e-12));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_grid >= -1e-6 && worst_rel <= 0.01 && secs < 30.0,
        format!("min(lloyd − grid) = {worst_grid:.3e}, max shortfall vs refine = {worst_rel:.3e}, {secs:.1} s"),
        format!("lloyd − grid = {worst_grid:.3e}, shortfall = {worst_rel:.3e}, {secs:.1} s"),
    )
}

fn granular_recovery() -> Outcome {
    let n = 1000;
    let pop = synth(n, 3);
    let problem = Problem::new(&pop);
    let cfg = SolverConfig {
        num_starts: 1,
        ..SolverConfig::default()
    }
    .with_treatments(n);
    let sol = Solver::new(&problem, cfg)
        .unwrap()
        .solve_level(n, None, &[])
        .unwrap();
    let ceiling: f64 = problem.granular().total();
    let rel = (sol.report.total_profit - ceiling).abs() / ceiling.abs();
    check(
        sol.report.total_regret == 0.0 && rel <= 1e-9,
        format!("regret = 0, relative profit gap {rel:.1e}"),
        format!("regret {}, relative gap {rel:.1e}", sol.report.total_regret),
    )
}

fn monotone_in_segments() -> Outcome {
    let mut worst: f64 = f64::INFINITY;
    for seed in 0..5u64 {
        let pop = synth(2000, 40 + seed);
        let problem = Problem::new(&pop);
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        }
        .with_treatments(10);
        let path = Solver::new(&problem, cfg)
            .unwrap()
            .solve_path(10, &[])
            .unwrap();
        for w in path.windows(2) {
            worst = worst.min(w[1].report.total_profit - w[0].report.total_profit);
        }
    }
    check(
        worst >= -1e-9,
        format!("smallest step in profit(L) = {worst:.3e}"),
        format!("profit fell by {:.3e}", -worst),
    )
}

fn foc_residuals() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut interior = 0;
    for seed in 0..10u64 {
        let pop = synth(3000, 60 + seed);
        let problem = Problem::new(&pop);
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        }
        .with_treatments(1 + seed as usize % 6);
        let sol = Solver::new(&problem, cfg).unwrap().solve().unwrap();
        for s in foc_residual(&problem, &sol.policy).unwrap() {
            if s.status == FocStatus::Interior {
                interior += 1;
                worst = worst.max(s.residual);
            }
        }
    }
    check(
        interior > 0 && worst <= 1e-6,
        format!("{interior} interior segments, max normalized residual {worst:.2e}"),
        format!("{interior} interior segments, max residual {worst:.2e}"),
    )
}

/// Same-dimension cells must occupy disjoint, ordered β/s intervals.
fn quantization_violations(pop: &Population, policy: &SegmentedPolicy) -> usize {
    let d = pop.dims();
    let mut ranges: Vec<(usize, f64, f64, f64)> = policy
        .treatments
        .iter()
        .map(|t| (t.dim, t.value, f64::INFINITY, f64::NEG_INFINITY))
        .collect();
    for (i, &c) in policy.assignment.iter().enumerate() {
        if let Some(r) = ranges.get_mut(c) {
            let ratio = pop.beta()[i * d + r.0] / pop.cost_scale()[i * d + r.0];
            r.2 = r.2.min(ratio);
            r.3 = r.3.max(ratio);
        }
    }
    let mut violations = 0;
    for a in &ranges {
        for b in &ranges {
            if a.0 == b.0 && a.1 < b.1 && a.2.is_finite() && b.2.is_finite() && a.3 > b.2 {
                violations += 1;
            }
        }
    }
    violations
}

fn quantization() -> Outcome {
    let mut violations = 0;
    for seed in 0..20u64 {
        let pop = synth(1500, 80 + seed);
        let problem = Problem::new(&pop);
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        }
        .with_treatments(2 + seed as usize % 7);
        let sol = Solver::new(&problem, cfg).unwrap().solve().unwrap();
        violations += quantization_violations(&pop, &sol.policy);
    }
    check(
        violations == 0,
        "0 violations on 20 instances".into(),
        format!("{violations} violations"),
    )
}

fn small_spec(n: usize, seed: u64, segments: usize, bootstrap: usize) -> ExperimentSpec {
    let mut spec = ExperimentSpec::from_toml("").unwrap();
    spec.synth_n = Some(n);
    spec.seed = seed;
    spec.max_segments = segments;
    spec.bootstrap = bootstrap;
    spec
}

fn dominance() -> Outcome {
    let mut worst: f64 = f64::INFINITY;
    let mut cells = 0;
    for seed in 0..3u64 {
        let bundle = run_experiment(
            &small_spec(3000, 200 + seed, 10, 0),
            std::path::Path::new("."),
        )
        .unwrap();
        let t = &bundle.profits;
        let coarse = t.column(Method::Coarse).unwrap();
        for (m, col) in &t.columns {
            if *m == Method::Coarse {
                continue;
            }
            for (c, b) in coarse.iter().zip(col) {
                cells += 1;
                worst = worst.min(c - b);
            }
        }
    }
    check(
        worst >= -1e-9,
        format!("{cells} cells, min(coarse − benchmark) = {worst:.3e}"),
        format!("coarse trails a benchmark by {:.3e}", -worst),
    )
}

fn surplus_identities() -> Outcome {
    let pop = synth(5000, 9);
    let problem = Problem::new(&pop);
    let sol = Solver::new(&problem, SolverConfig::default().with_treatments(4))
        .unwrap()
        .solve()
        .unwrap();
    let r = surplus_decomposition(&problem, &sol.policy).unwrap();
    let mut bad = 0;
    for (i, d) in r.individuals.iter().enumerate() {
        let regret = problem.granular().best_return(i)
            - pop
                .get(i)
                .profit_at(sol.policy.treatments[sol.policy.assignment[i]]);
        if d.total != d.consumer + d.producer
            || d.producer > 0.0
            || (d.producer + regret).abs() > 1e-9
        {
            bad += 1;
        }
    }
    let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
    let one = Population::from_individuals(
        space.clone(),
        [Individual::new("a", vec![0.0], vec![3.0], vec![1.0])],
    )
    .unwrap();
    let p1 = Problem::new(&one);
    let t = coarse::model::FeasibleTreatment::new(&space, 0, 1.0).unwrap();
    let worked = surplus_decomposition(
        &p1,
        &SegmentedPolicy::from_assignment(vec![t], vec![0], false),
    )
    .unwrap();
    let ts = worked.individuals[0].total;
    let cate_gap = 3.0 * 2f64.ln() - 3.0 * 3f64.ln();
    check(
        bad == 0
            && r.overall.producer_positive_pct == 0.0
            && (ts + 1.21640).abs() < 1e-5
            && (ts - cate_gap).abs() < 1e-9,
        format!(
            "identities hold for {} individuals, worked example ΔTS = {ts:.5}",
            pop.len()
        ),
        format!("{bad} identity violations, worked example ΔTS = {ts:.6}"),
    )
}

fn rounding_behavior() -> Outcome {
    let mut count_violations = 0;
    let mut worst: f64 = f64::INFINITY;
    for seed in 0..4u64 {
        let mut spec = small_spec(3000, 300 + seed, 6, 0);
        spec.methods = vec!["coarse".into()];
        let bundle = run_experiment(&spec, std::path::Path::new(".")).unwrap();
        let rows = &bundle.rounding;
        for l in 1..=6 {
            let find = |variant: &str, step: f64| {
                rows.iter()
                    .find(|r| r.segments == l && r.variant == variant && r.step == step)
                    .expect("rounding row")
            };
            let unrounded = find("none", 0.0);
            for step in [0.25, 0.5, 1.0] {
                if find("ex-post", step).effective_treatments > unrounded.effective_treatments {
                    count_violations += 1;
                }
            }
            worst = worst.min(find("ex-ante", 0.25).profit - find("ex-ante", 1.0).profit);
        }
    }
    check(
        count_violations == 0 && worst >= -1e-9,
        format!("ex-post never adds treatments, min(ex-ante 0.25 − ex-ante 1) = {worst:.3e}"),
        format!("{count_violations} count increases, min gap {worst:.3e}"),
    )
}

fn bootstrap_sanity() -> Outcome {
    use coarse::harness::{bootstrap_second_step, BootstrapMethod, Resample};
    let space = TreatmentSpace::promotions();
    let same = Population::from_individuals(
        space,
        (0..50).map(|i| {
            Individual::new(
                i.to_string(),
                vec![0.2, 0.1],
                vec![2.0, 1.5],
                vec![1.0, 0.3],
            )
        }),
    )
    .unwrap();
    let cfg = SolverConfig::default().with_treatments(2);
    let r = bootstrap_second_step(
        &same,
        20,
        &BootstrapMethod::Coarse(cfg),
        5,
        Resample::WithReplacement,
    )
    .unwrap();

    let bundle = run_experiment(&small_spec(1000, 11, 3, 100), std::path::Path::new(".")).unwrap();
    let mut reps: std::collections::BTreeMap<(String, String), Vec<f64>> = Default::default();
    let mut rdr = csv::Reader::from_reader(bundle.files["bootstrap.csv"].as_bytes());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        reps.entry((rec[1].to_string(), rec[2].to_string()))
            .or_default()
            .push(rec[3].parse().unwrap());
    }
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    let mut rdr = csv::Reader::from_reader(bundle.files["bootstrap_summary.csv"].as_bytes());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let values = &reps[&(rec[0].to_string(), rec[1].to_string())];
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let em: f64 = rec[3].parse().unwrap();
        let es: f64 = rec[4].parse().unwrap();
        worst = worst
            .max((mean - em).abs() / em.abs().max(1.0))
            .max((sd - es).abs() / es.abs().max(1.0));
        rows += 1;
    }
    check(
        r.sd == 0.0 && rows > 0 && worst <= 1e-12,
        format!(
            "identical population sd = 0, {rows} summary rows match recomputation to {worst:.1e}"
        ),
        format!("sd {} , recomputation gap {worst:.1e}", r.sd),
    )
}

fn performance() -> Outcome {
    let pop = synth(1_200_000, 2024);
    let problem = Problem::new(&pop);
    let t0 = Instant::now();
    let sol = Solver::new(&problem, SolverConfig::default().with_treatments(5))
        .unwrap()
        .solve()
        .unwrap();
    let solve_secs = t0.elapsed().as_secs_f64();
    let ratio_to_granular = sol.report.total_profit / problem.granular().total();

    let small = synth(100_000, 2025);
    let sp = Problem::new(&small);
    let speed = speed_benchmark(&sp, 5, 10, &SolverConfig::default()).unwrap();
    check(
        solve_secs < 60.0 && speed.ratio >= 5.0,
        format!(
            "1.2M individuals, L=5 in {solve_secs:.1} s (ratio to granular {ratio_to_granular:.4}); grid/lloyd = {:.1}x ({:.2} s vs {:.2} s, {} threads)",
            speed.ratio, speed.grid_seconds, speed.lloyd_seconds, speed.threads
        ),
        format!("solve {solve_secs:.1} s, speed ratio {:.1}x", speed.ratio),
    )
}

fn determinism() -> Outcome {
    let spec = small_spec(4000, 77, 6, 4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            run_experiment(&spec, std::path::Path::new("."))
                .unwrap()
                .files
        })
    };
    let a = run(1);
    let b = run(4);
    let c = run(4);
    let differing: Vec<&String> = a
        .keys()
        .filter(|k| a[*k] != b[*k] || b[*k] != c[*k])
        .collect();
    check(
        differing.is_empty() && a.len() == b.len(),
        format!("{} files byte-identical across 1 and 4 threads", a.len()),
        format!("differing files: {differing:?}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("1 closed-form optimum", closed_form_optimum),
        ("2 oracle equivalence", oracle_equivalence),
        ("3 granular recovery", granular_recovery),
        ("4 monotonicity in L", monotone_in_segments),
        ("5 FOC residual", foc_residuals),
        ("6 quantization", quantization),
        ("7 dominance chain", dominance),
        ("8 surplus identities", surplus_identities),
        ("9 rounding behavior", rounding_behavior),
        ("10 bootstrap sanity", bootstrap_sanity),
        ("11 performance", performance),
        ("12 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        match f() {
            Ok(detail) => println!(
                "PASS criterion {name}: {detail} [{:.1} s]",
                t.elapsed().as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "FAIL criterion {name}: {detail} [{:.1} s]",
                    t.elapsed().as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
