//! Brute-force reference solvers.
//!
//! [`grid_solve`] is exactly optimal over a finite grid of treatments.
//! [`refine_solve`] fixes the multiset of treatment dimensions, then runs a
//! continuous alternating search per composition from several seeds; its
//! level update is a golden-section search, independent of the closed form
//! used by the Lloyd solver.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::profit_columns;
use crate::cells::{profit_in_cell, sweep};
use crate::granular::Problem;
use crate::lloyd::{Solver, SolverConfig};
use crate::model::{FeasibleTreatment, ProfitReport, SegmentedPolicy};
use crate::numeric::{golden_section_max, ln1p_diff, mix_seed};
use crate::subsets::{best_subset, binomial};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub policy: SegmentedPolicy,
    pub report: ProfitReport,
    /// Subsets or compositions examined.
    pub enumerated: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    pub points_per_dim: usize,
    /// Use `0, t̄/(G−1), …, t̄` instead of `t̄/G, 2t̄/G, …, t̄`.
    pub include_zero: bool,
    pub cap: u128,
}

impl GridOptions {
    pub fn new(points_per_dim: usize) -> Self {
        Self {
            points_per_dim,
            include_zero: false,
            cap: 10_000_000,
        }
    }
}

/// The `G·D` grid treatments, dimension-major.
pub fn grid_points(upper_bounds: &[f64], opts: &GridOptions) -> Vec<FeasibleTreatment> {
    let g = opts.points_per_dim;
    let mut out = Vec::with_capacity(g * upper_bounds.len());
    for (dim, &upper) in upper_bounds.iter().enumerate() {
        for k in 0..g {
            let value = if opts.include_zero {
                if g == 1 {
                    upper
                } else {
                    upper * k as f64 / (g - 1) as f64
                }
            } else {
                upper * (k + 1) as f64 / g as f64
            };
            out.push(FeasibleTreatment { dim, value });
        }
    }
    out
}

/// Most profitable `L`-subset of the grid, each individual taking their best
/// offered grid treatment. Refuses when `C(G·D, L)` exceeds the cap.
pub fn grid_solve(problem: &Problem<'_>, l: usize, opts: &GridOptions) -> Result<OracleSolution> {
    if opts.points_per_dim == 0 {
        return Err(Error::Config(
            "grid needs at least one point per dimension".into(),
        ));
    }
    if problem.is_empty() {
        return Err(Error::Config("population is empty".into()));
    }
    let candidates = grid_points(problem.upper_bounds(), opts);
    if l == 0 || l > candidates.len() {
        return Err(Error::Config(format!(
            "{l} treatments requested from a grid of {}",
            candidates.len()
        )));
    }
    let count = binomial(candidates.len() as u128, l as u128);
    if count > opts.cap {
        return Err(Error::EnumerationCap {
            count,
            cap: opts.cap,
        });
    }
    let columns = profit_columns(problem, &candidates);
    let (chosen, _) = best_subset(&columns, l);
    let treatments: Vec<FeasibleTreatment> = chosen.iter().map(|&j| candidates[j]).collect();
    let solved = crate::benchmarks::assigned(problem, treatments)?;
    Ok(OracleSolution {
        policy: solved.policy,
        report: solved.report,
        enumerated: count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    pub cap: u128,
    /// Random seeds per composition, on top of the quantile seed.
    pub random_seeds: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            cap: 10_000,
            random_seeds: 8,
            max_iterations: 500,
            tolerance: 1e-11,
            seed: 0,
        }
    }
}

/// Treatment-count vectors `(c_1, …, c_D)` with `Σ c_d = L`, in lexicographic
/// order; one per multiset of `L` dimensions.
pub fn compositions(dims: usize, l: usize) -> Vec<Vec<usize>> {
    fn rec(dims: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == dims {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(dims, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dims > 0 {
        rec(dims, l, &mut Vec::new(), &mut out);
    }
    out
}

/// Continuous reference: best over dimension compositions of an alternating
/// assign / golden-section level search, with single-member transfers
/// between cells once it settles.
pub fn refine_solve(
    problem: &Problem<'_>,
    l: usize,
    opts: &RefineOptions,
) -> Result<OracleSolution> {
    if problem.is_empty() {
        return Err(Error::Config("population is empty".into()));
    }
    if l == 0 {
        return Err(Error::Config("at least one treatment is required".into()));
    }
    let d = problem.dims();
    let count = binomial((l + d - 1) as u128, (d - 1) as u128);
    if count > opts.cap {
        return Err(Error::EnumerationCap {
            count,
            cap: opts.cap,
        });
    }
    let mut best: Option<(f64, Vec<FeasibleTreatment>)> = None;
    for (ci, comp) in compositions(d, l).iter().enumerate() {
        let dims: Vec<usize> = comp
            .iter()
            .enumerate()
            .flat_map(|(dim, &c)| std::iter::repeat_n(dim, c))
            .collect();
        let mut inits = vec![quantile_seed(problem, &dims)];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, l as u64, ci as u64));
        for _ in 0..opts.random_seeds {
            inits.push(
                dims.iter()
                    .map(|&dim| FeasibleTreatment {
                        dim,
                        value: rng.random::<f64>() * problem.upper_bounds()[dim],
                    })
                    .collect(),
            );
        }
        for init in inits {
            let (profit, treatments) = alternate(problem, init, opts);
            if best.as_ref().is_none_or(|(b, _)| profit > *b) {
                best = Some((profit, treatments));
            }
        }
    }
    let (_, treatments) = best.expect("at least one composition");
    let solved = crate::benchmarks::assigned(problem, treatments)?;
    Ok(OracleSolution {
        policy: solved.policy,
        report: solved.report,
        enumerated: count,
    })
}

/// Levels at evenly spaced quantiles of the optima in each dimension.
fn quantile_seed(problem: &Problem<'_>, dims: &[usize]) -> Vec<FeasibleTreatment> {
    let g = problem.granular();
    let mut out = Vec::with_capacity(dims.len());
    for dim in 0..problem.dims() {
        let c = dims.iter().filter(|&&x| x == dim).count();
        if c == 0 {
            continue;
        }
        let mut levels: Vec<f64> = (0..problem.len()).map(|i| g.t_star(i, dim)).collect();
        levels.sort_by(f64::total_cmp);
        for j in 0..c {
            let q = (j as f64 + 0.5) / c as f64;
            let idx = ((q * levels.len() as f64) as usize).min(levels.len() - 1);
            out.push(FeasibleTreatment {
                dim,
                value: levels[idx],
            });
        }
    }
    out
}

fn alternate(
    problem: &Problem<'_>,
    mut current: Vec<FeasibleTreatment>,
    opts: &RefineOptions,
) -> (f64, Vec<FeasibleTreatment>) {
    let bounds = problem.upper_bounds();
    let mut assignment = vec![0; problem.len()];
    let mut best = (f64::NEG_INFINITY, current.clone());
    for _ in 0..opts.max_iterations {
        let table = sweep(problem, &current, false, false, &mut assignment);
        if table.total_profit > best.0 {
            best = (table.total_profit, current.clone());
        }
        let mut next = current.clone();
        let mut reseeded = false;
        for (c, t) in current.iter().enumerate() {
            let cell = table.cell(c);
            if cell.count == 0 {
                // Highest-regret individual's optimum within this dimension.
                let mut pick: Option<(f64, usize)> = None;
                for (i, &a) in assignment.iter().enumerate() {
                    let r =
                        problem.granular().best_return(i) - profit_in_cell(problem, &current, i, a);
                    if r > 0.0 && pick.is_none_or(|(b, _)| r > b) {
                        pick = Some((r, i));
                    }
                }
                if let Some((_, i)) = pick {
                    let v = problem.granular().t_star(i, t.dim);
                    if !next.iter().any(|u| u.dim == t.dim && u.value == v) {
                        next[c].value = v;
                        reseeded = true;
                    }
                }
                continue;
            }
            let (b, s) = (cell.beta[t.dim], cell.cost[t.dim]);
            next[c].value = golden_section_max(
                |x, y| b * ln1p_diff(x, y) - s * (x - y),
                0.0,
                bounds[t.dim],
                opts.tolerance,
            );
        }
        let moved = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a.value - b.value).abs())
            .fold(0.0, f64::max);
        if !reseeded && moved < opts.tolerance * 10.0 {
            // Settled; carry on only if moving single members pays.
            match crate::lloyd::transfer::refine(problem, &current, &assignment, false, bounds, 0.0)
            {
                Some(moved_members) => current = moved_members,
                None => break,
            }
        } else {
            current = next;
        }
    }
    let table = sweep(problem, &current, false, false, &mut assignment);
    if table.total_profit > best.0 {
        best = (table.total_profit, current);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub individuals: usize,
    pub treatments: usize,
    pub points_per_dim: usize,
    pub num_starts: usize,
    pub threads: usize,
    pub lloyd_seconds: f64,
    pub grid_seconds: f64,
    /// `grid_seconds / lloyd_seconds`.
    pub ratio: f64,
    pub lloyd_profit: f64,
    pub grid_profit: f64,
}

/// Wall-clock comparison of one Lloyd solve at `L` (all configured starts,
/// no warm chain) against the grid search at the same `L`, on the current
/// thread pool.
pub fn speed_benchmark(
    problem: &Problem<'_>,
    l: usize,
    g: usize,
    config: &SolverConfig,
) -> Result<SpeedReport> {
    let solver = Solver::new(problem, config.clone().with_treatments(l))?;
    let t0 = Instant::now();
    let lloyd = solver.solve_level(l, None, &[])?;
    let lloyd_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let grid = grid_solve(problem, l, &GridOptions::new(g))?;
    let grid_seconds = t1.elapsed().as_secs_f64();
    Ok(SpeedReport {
        individuals: problem.len(),
        treatments: l,
        points_per_dim: g,
        num_starts: config.num_starts,
        threads: rayon::current_num_threads(),
        lloyd_seconds,
        grid_seconds,
        ratio: grid_seconds / lloyd_seconds.max(f64::MIN_POSITIVE),
        lloyd_profit: lloyd.report.total_profit,
        grid_profit: grid.report.total_profit,
    })
}
