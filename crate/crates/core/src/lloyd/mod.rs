//! Adapted Lloyd iteration for coarse personalization.
//!
//! One start alternates three steps until the offered treatments stop moving:
//!
//! 1. assign every individual to their most profitable offered treatment
//!    (the Voronoi cells of the regret cost);
//! 2. propose a new level per dimension for every cell, either the mean of
//!    the members' optima or the cell-profit maximiser;
//! 3. keep only the dimension with the highest total cell profit.
//!
//! Several starts are run and the most profitable result is kept.

mod post;
mod seeds;
pub(crate) mod transfer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::cells::UpdateRule;
use crate::cells::{sweep, CellTable};
use crate::granular::Problem;
use crate::model::{FeasibleTreatment, Population, ProfitReport, SegmentedPolicy};
use crate::numeric::mix_seed;
use crate::{Error, Result};

/// Largest population the k-means start clusters directly.
const SEED_SAMPLE: usize = 8192;

pub use post::{
    foc_residual, round_policy_expost, solve_menu, FocStatus, MenuSolution, RoundedPolicy,
    SegmentFoc,
};

/// Fixed cost of offering `L` distinct treatments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "delta", rename_all = "lowercase")]
pub enum MenuCost {
    #[default]
    None,
    /// `δ·L`
    Linear(f64),
    /// `δ·L²`
    Quadratic(f64),
}

impl MenuCost {
    pub fn cost(&self, l: usize) -> f64 {
        let l = l as f64;
        match *self {
            MenuCost::None => 0.0,
            MenuCost::Linear(d) => d * l,
            MenuCost::Quadratic(d) => d * l * l,
        }
    }
}

impl FromStr for MenuCost {
    type Err = Error;

    /// `none`, `linear:<δ>` or `quadratic:<δ>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "menu cost '{s}' is not none, linear:<delta> or quadratic:<delta>"
            ))
        };
        if s == "none" {
            return Ok(MenuCost::None);
        }
        let (kind, delta) = s.split_once(':').ok_or_else(bad)?;
        let delta: f64 = delta.trim().parse().map_err(|_| bad())?;
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(bad());
        }
        match kind {
            "linear" => Ok(MenuCost::Linear(delta)),
            "quadratic" => Ok(MenuCost::Quadratic(delta)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for MenuCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MenuCost::None => write!(f, "none"),
            MenuCost::Linear(d) => write!(f, "linear:{d}"),
            MenuCost::Quadratic(d) => write!(f, "quadratic:{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub num_treatments: usize,
    /// Largest treatment-value change still counted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub num_starts: usize,
    pub update_rule: UpdateRule,
    /// Ex-ante rounding step; 0 disables rounding.
    pub round_step: f64,
    pub menu_cost: MenuCost,
    pub seed: u64,
    /// Adds a no-treatment cell for individuals every offer loses money on.
    pub allow_holdout: bool,
    /// Evaluate with every intercept forced to zero.
    pub zero_intercept: bool,
    /// Populations up to this size get single-member transfers between
    /// cells once a start settles (exact rule only); 0 disables them.
    #[serde(default = "default_transfer_limit")]
    pub transfer_limit: usize,
}

fn default_transfer_limit() -> usize {
    2_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            num_treatments: 5,
            tolerance: 1e-6,
            max_iterations: 1000,
            num_starts: 5,
            update_rule: UpdateRule::Exact,
            round_step: 0.0,
            menu_cost: MenuCost::None,
            seed: 0,
            allow_holdout: false,
            zero_intercept: false,
            transfer_limit: default_transfer_limit(),
        }
    }
}

impl SolverConfig {
    pub fn with_treatments(mut self, l: usize) -> Self {
        self.num_treatments = l;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.num_treatments == 0 {
            return Err(Error::Config(
                "number of treatments must be at least 1".into(),
            ));
        }
        if self.num_treatments > n {
            return Err(Error::Config(format!(
                "{} treatments requested for {n} individuals",
                self.num_treatments
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if !(self.round_step >= 0.0 && self.round_step.is_finite()) {
            return Err(Error::Config(format!(
                "rounding step {} must be non-negative",
                self.round_step
            )));
        }
        if self.max_iterations == 0 || self.num_starts == 0 {
            return Err(Error::Config(
                "iteration and start counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    Spread,
    Warm,
    KMeans,
    Random,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub treatments: Vec<FeasibleTreatment>,
    pub squared_regret: f64,
    pub total_profit: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub num_treatments: usize,
    pub start: usize,
    pub start_kind: StartKind,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub kind: StartKind,
    pub initial_profit: f64,
    pub final_profit: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub policy: SegmentedPolicy,
    pub report: ProfitReport,
    /// Trace of the winning start.
    pub trace: SolveTrace,
    pub starts: Vec<SeedOutcome>,
    /// `ψ(L)` under the configured menu cost.
    pub menu_cost: f64,
}

impl Solution {
    /// Squared regret plus the menu cost.
    pub fn objective(&self) -> f64 {
        self.report.squared_regret + self.menu_cost
    }

    /// Profit net of the menu cost.
    pub fn net_profit(&self) -> f64 {
        self.report.total_profit - self.menu_cost
    }
}

/// Assignment and cell masses for a fixed set of offers.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub assignment: Vec<usize>,
    pub masses: Vec<f64>,
}

pub fn assign(
    problem: &Problem<'_>,
    treatments: &[FeasibleTreatment],
    allow_holdout: bool,
) -> Result<Assignment> {
    check_offers(problem, treatments)?;
    let mut assignment = vec![0; problem.len()];
    let table = sweep(problem, treatments, allow_holdout, false, &mut assignment);
    let n = problem.len().max(1) as f64;
    Ok(Assignment {
        assignment,
        masses: table.counts().iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Coordinate-wise mean of the members' optimal levels.
pub fn barycenter_update(problem: &Problem<'_>, members: &[usize]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Structural("barycenter of an empty cell".into()));
    }
    check_members(problem, members)?;
    Ok(CellTable::from_members(problem, members)
        .cell(0)
        .barycenter())
}

/// Keeps the dimension with the highest total member profit. Under
/// [`UpdateRule::Exact`] each level is first replaced by the cell optimum.
pub fn reduce_dimension(
    problem: &Problem<'_>,
    members: &[usize],
    candidate: &[f64],
    rule: UpdateRule,
    round_step: f64,
) -> Result<FeasibleTreatment> {
    if candidate.len() != problem.dims() {
        return Err(Error::Structural(format!(
            "candidate has {} levels for {} dimensions",
            candidate.len(),
            problem.dims()
        )));
    }
    check_members(problem, members)?;
    let table = CellTable::from_members(problem, members);
    Ok(table
        .cell(0)
        .reduce(Some(candidate), rule, problem.upper_bounds(), round_step))
}

fn check_offers(problem: &Problem<'_>, treatments: &[FeasibleTreatment]) -> Result<()> {
    if treatments.is_empty() {
        return Err(Error::Structural("no treatments offered".into()));
    }
    for t in treatments {
        problem.pop().space().check(t.dim, t.value)?;
    }
    Ok(())
}

fn check_members(problem: &Problem<'_>, members: &[usize]) -> Result<()> {
    match members.iter().find(|&&i| i >= problem.len()) {
        Some(i) => Err(Error::Structural(format!(
            "member {i} outside population of {}",
            problem.len()
        ))),
        None => Ok(()),
    }
}

/// Solves at `config.num_treatments` from scratch, including the warm chain
/// `1..L`.
pub fn solve(pop: &Population, config: &SolverConfig) -> Result<Solution> {
    if config.zero_intercept {
        let problem = Problem::zero_intercept(pop);
        Solver::new(&problem, config.clone())?.solve()
    } else {
        let problem = Problem::new(pop);
        Solver::new(&problem, config.clone())?.solve()
    }
}

struct StartOutcome {
    treatments: Vec<FeasibleTreatment>,
    profit: f64,
    initial_profit: f64,
    trace: SolveTrace,
}

/// The solver bound to one problem. Intercept handling is a property of the
/// problem: build it with [`Problem::zero_intercept`] to drop `α`.
pub struct Solver<'p, 'a> {
    problem: &'p Problem<'a>,
    config: SolverConfig,
}

impl<'p, 'a> Solver<'p, 'a> {
    pub fn new(problem: &'p Problem<'a>, config: SolverConfig) -> Result<Self> {
        if problem.is_empty() {
            return Err(Error::Config("population is empty".into()));
        }
        config.validate(problem.len())?;
        Ok(Self { problem, config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn problem(&self) -> &Problem<'a> {
        self.problem
    }

    /// Warm-started solutions for `L = 1..=config.num_treatments`; returns the last.
    pub fn solve(&self) -> Result<Solution> {
        let mut path = self.solve_path(self.config.num_treatments, &[])?;
        Ok(path.pop().expect("path has at least one level"))
    }

    /// Warm-started solutions for `L = 1..=l_max`. `extra[L-1]`, when present,
    /// lists further seed treatment sets for level `L`; each is padded to `L`
    /// treatments by greedy highest-regret additions.
    pub fn solve_path(
        &self,
        l_max: usize,
        extra: &[Vec<Vec<FeasibleTreatment>>],
    ) -> Result<Vec<Solution>> {
        if l_max == 0 || l_max > self.problem.len() {
            return Err(Error::Config(format!(
                "{l_max} treatments requested for {} individuals",
                self.problem.len()
            )));
        }
        let mut out: Vec<Solution> = Vec::with_capacity(l_max);
        for l in 1..=l_max {
            let seeds = extra.get(l - 1).map(Vec::as_slice).unwrap_or(&[]);
            let sol = self.solve_level(l, out.last().map(|s| &s.policy), seeds)?;
            out.push(sol);
        }
        Ok(out)
    }

    /// One level with an optional warm start from a `(L−1)`-treatment policy.
    pub fn solve_level(
        &self,
        l: usize,
        warm: Option<&SegmentedPolicy>,
        extra: &[Vec<FeasibleTreatment>],
    ) -> Result<Solution> {
        let cfg = &self.config;
        if l == 0 || l > self.problem.len() {
            return Err(Error::Config(format!(
                "{l} treatments requested for {} individuals",
                self.problem.len()
            )));
        }
        let starts = self.initial_sets(l, warm, extra)?;
        let outcomes: Vec<StartOutcome> = starts
            .into_iter()
            .enumerate()
            .map(|(k, (kind, init))| self.run_start(l, k, kind, init))
            .collect();

        let mut winner = 0;
        for (k, o) in outcomes.iter().enumerate() {
            if o.profit > outcomes[winner].profit {
                winner = k;
            }
        }
        let starts = outcomes
            .iter()
            .map(|o| SeedOutcome {
                kind: o.trace.start_kind,
                initial_profit: o.initial_profit,
                final_profit: o.profit,
            })
            .collect();
        let best = outcomes
            .into_iter()
            .nth(winner)
            .expect("at least one start");
        let treatments = seeds::dedupe(self.problem, best.treatments, cfg.round_step);
        let mut assignment = vec![0; self.problem.len()];
        sweep(
            self.problem,
            &treatments,
            cfg.allow_holdout,
            false,
            &mut assignment,
        );
        let policy = SegmentedPolicy::from_assignment(treatments, assignment, cfg.allow_holdout);
        let report = self.problem.report(&policy)?;
        Ok(Solution {
            policy,
            report,
            trace: best.trace,
            starts,
            menu_cost: cfg.menu_cost.cost(l),
        })
    }

    /// Start list: spread, warm split (when a warm policy exists), k-means on
    /// optimal levels, then seeded random sets, truncated to `num_starts`.
    /// The warm start always runs when available; supplied seeds run in
    /// addition to the configured starts.
    fn initial_sets(
        &self,
        l: usize,
        warm: Option<&SegmentedPolicy>,
        extra: &[Vec<FeasibleTreatment>],
    ) -> Result<Vec<(StartKind, Vec<FeasibleTreatment>)>> {
        let cfg = &self.config;
        let (p, step, holdout) = (self.problem, cfg.round_step, cfg.allow_holdout);
        let rng = |k: usize| ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, l as u64, k as u64));
        let mut sets: Vec<(StartKind, Vec<FeasibleTreatment>)> = Vec::new();

        sets.push((
            StartKind::Spread,
            seeds::spread(p, l, holdout, step, &mut rng(0)),
        ));
        if let Some(prev) = warm.filter(|w| w.treatments.len() + 1 == l) {
            sets.push((StartKind::Warm, seeds::split_largest(p, prev, step)));
        }
        let configured = cfg.num_starts;
        if sets.len() < configured {
            let opts = crate::benchmarks::KMeansOptions {
                starts: 1,
                seed: mix_seed(cfg.seed, l as u64, 0x6b6d),
                ..Default::default()
            };
            // Clustering a strided sample is enough for a starting point.
            let n = p.len();
            let sample = (n > SEED_SAMPLE).then(|| {
                let idx: Vec<usize> = (0..SEED_SAMPLE).map(|j| j * n / SEED_SAMPLE).collect();
                Problem::owned(p.pop().subset(&idx))
            });
            let km = crate::benchmarks::segment_then_personalize(
                sample.as_ref().unwrap_or(p),
                l,
                crate::benchmarks::Feature::OptimalLevels,
                &opts,
            )?;
            sets.push((
                StartKind::KMeans,
                seeds::pad_greedy(p, km.policy.treatments, l, holdout, step),
            ));
        }
        let mut k = sets.len();
        while sets.len() < configured {
            sets.push((StartKind::Random, seeds::random(p, l, &mut rng(k))));
            k += 1;
        }
        for seed in extra {
            sets.push((
                StartKind::Supplied,
                seeds::pad_greedy(p, seed.clone(), l, holdout, step),
            ));
        }
        Ok(sets
            .into_iter()
            .map(|(kind, s)| (kind, seeds::prepare(p, s, step)))
            .collect())
    }

    fn run_start(
        &self,
        l: usize,
        start: usize,
        kind: StartKind,
        init: Vec<FeasibleTreatment>,
    ) -> StartOutcome {
        let cfg = &self.config;
        let p = self.problem;
        let bounds = p.upper_bounds();
        let mut current = init;
        let mut assignment = vec![0usize; p.len()];
        let mut best: Option<(f64, Vec<FeasibleTreatment>)> = None;
        let mut iterations = Vec::new();
        let mut termination = Termination::IterationCap;
        let mut settled = false;

        for k in 0..cfg.max_iterations {
            let table = sweep(
                p,
                &current,
                cfg.allow_holdout,
                cfg.update_rule == UpdateRule::Barycenter,
                &mut assignment,
            );
            iterations.push(IterationRecord {
                iteration: k,
                treatments: current.clone(),
                squared_regret: table.squared_regret,
                total_profit: table.total_profit,
                counts: table.counts().to_vec(),
            });
            if best.as_ref().is_none_or(|(b, _)| table.total_profit > *b) {
                best = Some((table.total_profit, current.clone()));
            }
            if settled {
                let refined = (k + 1 < cfg.max_iterations
                    && cfg.update_rule == UpdateRule::Exact
                    && p.len() <= cfg.transfer_limit)
                    .then(|| {
                        transfer::refine(
                            p,
                            &current,
                            &assignment,
                            cfg.allow_holdout,
                            bounds,
                            cfg.round_step,
                        )
                    })
                    .flatten();
                match refined {
                    Some(next) => {
                        current = next;
                        settled = false;
                        continue;
                    }
                    None => {
                        termination = Termination::Converged;
                        break;
                    }
                }
            }
            if k + 1 == cfg.max_iterations {
                break;
            }

            let mut next = current.clone();
            let empties: Vec<usize> = (0..l).filter(|&c| table.counts()[c] == 0).collect();
            let reseeded =
                !empties.is_empty() && self.reseed(&current, &assignment, &empties, &mut next);
            for (c, slot) in next.iter_mut().enumerate() {
                let cell = table.cell(c);
                if cell.count > 0 {
                    *slot = cell.reduce(None, cfg.update_rule, bounds, cfg.round_step);
                }
            }
            let stable_dims = next.iter().zip(&current).all(|(a, b)| a.dim == b.dim);
            let moved = next
                .iter()
                .zip(&current)
                .map(|(a, b)| (a.value - b.value).abs())
                .fold(0.0, f64::max);
            settled = !reseeded && stable_dims && moved < cfg.tolerance;
            current = next;
        }
        let initial_profit = iterations[0].total_profit;
        let (profit, treatments) = best.expect("at least one iteration");
        StartOutcome {
            treatments,
            profit,
            initial_profit,
            trace: SolveTrace {
                num_treatments: l,
                start,
                start_kind: kind,
                iterations,
                termination,
            },
        }
    }

    /// Moves each empty cell to the target of the highest-regret individual
    /// whose target is not yet offered. Returns whether anything moved.
    fn reseed(
        &self,
        current: &[FeasibleTreatment],
        assignment: &[usize],
        empties: &[usize],
        next: &mut [FeasibleTreatment],
    ) -> bool {
        use rayon::prelude::*;
        let p = self.problem;
        let holdout = self.config.allow_holdout;
        let step = self.config.round_step;
        let mut regret: Vec<f64> = assignment
            .par_iter()
            .enumerate()
            .map(|(i, &c)| {
                p.granular().benchmark(i, holdout) - crate::cells::profit_in_cell(p, current, i, c)
            })
            .collect();
        let mut changed = false;
        for &cell in empties {
            loop {
                let mut pick: Option<(f64, usize)> = None;
                for (i, &r) in regret.iter().enumerate() {
                    if r > 0.0 && pick.is_none_or(|(b, _)| r > b) {
                        pick = Some((r, i));
                    }
                }
                let Some((_, i)) = pick else { return changed };
                regret[i] = 0.0;
                let t = seeds::target(p, i, step);
                if next.iter().any(|u| u.same_as(&t)) {
                    continue;
                }
                next[cell] = t;
                changed = true;
                break;
            }
        }
        changed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Individual, TreatmentSpace};
    use approx::assert_abs_diff_eq;

    fn pop1(betas: &[f64]) -> Population {
        let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
        Population::from_individuals(
            space,
            betas
                .iter()
                .enumerate()
                .map(|(i, b)| Individual::new(i.to_string(), vec![0.0], vec![*b], vec![1.0])),
        )
        .unwrap()
    }

    #[test]
    fn assign_picks_more_profitable_offer() {
        let pop = pop1(&[3.0]);
        let p = Problem::new(&pop);
        let offers = [
            FeasibleTreatment { dim: 0, value: 1.0 },
            FeasibleTreatment { dim: 0, value: 3.0 },
        ];
        assert_eq!(assign(&p, &offers, false).unwrap().assignment, vec![1]);
        assert!(matches!(assign(&p, &[], false), Err(Error::Structural(_))));
    }

    #[test]
    fn assign_ties_go_low() {
        let pop = pop1(&[3.0]);
        let p = Problem::new(&pop);
        let t = FeasibleTreatment { dim: 0, value: 2.0 };
        assert_eq!(assign(&p, &[t, t], false).unwrap().assignment, vec![0]);
    }

    #[test]
    fn barycenter_examples() {
        let pop = pop1(&[2.0, 3.0, 4.0]);
        let p = Problem::new(&pop);
        assert_eq!(barycenter_update(&p, &[0, 1, 2]).unwrap(), vec![2.0]);
        assert_eq!(barycenter_update(&p, &[1]).unwrap(), vec![2.0]);
        assert!(barycenter_update(&p, &[]).is_err());
    }

    #[test]
    fn exact_reduction_uses_segment_foc() {
        let space = TreatmentSpace::promotions();
        let pop = Population::from_individuals(
            space,
            [2.0, 4.0]
                .iter()
                .map(|b| Individual::new("x", vec![0.0, 0.0], vec![*b, 0.1], vec![1.0, 1.0])),
        )
        .unwrap();
        let p = Problem::new(&pop);
        let t = reduce_dimension(&p, &[0, 1], &[0.0, 0.0], UpdateRule::Exact, 0.0).unwrap();
        assert_eq!((t.dim, t.value), (0, 2.0));
    }

    #[test]
    fn single_treatment_converges_to_mean() {
        let pop = pop1(&[2.0, 3.0, 4.0]);
        let cfg = SolverConfig {
            num_treatments: 1,
            update_rule: UpdateRule::Barycenter,
            ..Default::default()
        };
        let sol = solve(&pop, &cfg).unwrap();
        assert_eq!(sol.policy.treatments.len(), 1);
        assert_abs_diff_eq!(sol.policy.treatments[0].value, 2.0, epsilon = 1e-9);
        assert_eq!(sol.trace.termination, Termination::Converged);
    }

    #[test]
    fn two_clusters_are_quantized_exactly() {
        let pop = pop1(&[2.0, 2.0, 2.0, 4.0, 4.0, 4.0]);
        let sol = solve(&pop, &SolverConfig::default().with_treatments(2)).unwrap();
        let mut v: Vec<f64> = sol.policy.treatments.iter().map(|t| t.value).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![1.0, 3.0]);
        assert_eq!(sol.report.total_regret, 0.0);
    }

    #[test]
    fn too_many_treatments_is_a_config_error() {
        let pop = pop1(&[2.0]);
        assert!(matches!(
            solve(&pop, &SolverConfig::default().with_treatments(2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn menu_cost_parsing() {
        assert_eq!("none".parse::<MenuCost>().unwrap(), MenuCost::None);
        assert_eq!(
            "linear:0.5".parse::<MenuCost>().unwrap(),
            MenuCost::Linear(0.5)
        );
        assert_eq!("quadratic:2".parse::<MenuCost>().unwrap().cost(3), 18.0);
        assert!("linear:-1".parse::<MenuCost>().is_err());
        assert!("cubic:1".parse::<MenuCost>().is_err());
    }

    #[test]
    fn holdout_cell_takes_unprofitable_individuals() {
        let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
        let pop = Population::from_individuals(
            space,
            [(0.0, 3.0), (-5.0, 0.5)]
                .iter()
                .map(|(a, b)| Individual::new("x", vec![*a], vec![*b], vec![1.0])),
        )
        .unwrap();
        let p = Problem::new(&pop);
        let a = assign(&p, &[FeasibleTreatment { dim: 0, value: 2.0 }], true).unwrap();
        assert_eq!(a.assignment, vec![0, 1]);
        assert_eq!(a.masses, vec![0.5, 0.5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn solved(pop: &Population, l: usize, seed: u64) -> Solution {
            let p = Problem::new(pop);
            let cfg = SolverConfig {
                seed,
                num_starts: 3,
                ..SolverConfig::default()
            }
            .with_treatments(l);
            Solver::new(&p, cfg).unwrap().solve().unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn exact_iterations_never_lose_profit(pop in crate::testing::population(4..60), l in 1..4usize, seed in 0..1000u64) {
                let sol = solved(&pop, l.min(pop.len()), seed);
                for w in sol.trace.iterations.windows(2) {
                    prop_assert!(w[1].total_profit >= w[0].total_profit - 1e-9 * w[0].total_profit.abs().max(1.0));
                }
            }

            #[test]
            fn nobody_prefers_another_offer(pop in crate::testing::population(4..60), l in 1..4usize, seed in 0..1000u64) {
                let sol = solved(&pop, l.min(pop.len()), seed);
                for (i, person) in pop.iter().enumerate() {
                    let mine = person.profit_at(sol.policy.treatments[sol.policy.assignment[i]]);
                    for t in &sol.policy.treatments {
                        prop_assert!(person.profit_at(*t) <= mine);
                    }
                }
            }

            #[test]
            fn same_dimension_cells_are_contiguous_in_sensitivity(
                pop in crate::testing::population(4..60),
                l in 2..5usize,
                seed in 0..1000u64,
            ) {
                let sol = solved(&pop, l.min(pop.len()), seed);
                let pol = &sol.policy;
                let ratio = |i: usize, d: usize| pop.get(i).beta[d] / pop.get(i).cost_scale[d];
                for (a, ta) in pol.treatments.iter().enumerate() {
                    for (b, tb) in pol.treatments.iter().enumerate() {
                        if ta.dim != tb.dim || ta.value >= tb.value {
                            continue;
                        }
                        let d = ta.dim;
                        let top_a = (0..pop.len()).filter(|&i| pol.assignment[i] == a).map(|i| ratio(i, d)).fold(f64::NEG_INFINITY, f64::max);
                        let low_b = (0..pop.len()).filter(|&i| pol.assignment[i] == b).map(|i| ratio(i, d)).fold(f64::INFINITY, f64::min);
                        prop_assert!(top_a <= low_b * (1.0 + 1e-12));
                    }
                }
            }

            #[test]
            fn solution_beats_every_start(pop in crate::testing::population(4..60), l in 1..4usize, seed in 0..1000u64) {
                let sol = solved(&pop, l.min(pop.len()), seed);
                for s in &sol.starts {
                    prop_assert!(sol.report.total_profit >= s.initial_profit - 1e-9);
                    prop_assert!(sol.report.total_profit >= s.final_profit - 1e-9);
                }
            }

            #[test]
            fn profit_grows_with_segments(pop in crate::testing::population(6..60), seed in 0..1000u64) {
                let p = Problem::new(&pop);
                let cfg = SolverConfig { seed, num_starts: 2, ..SolverConfig::default() };
                let path = Solver::new(&p, cfg).unwrap().solve_path(pop.len().min(6), &[]).unwrap();
                for w in path.windows(2) {
                    prop_assert!(w[1].report.total_profit >= w[0].report.total_profit - 1e-9);
                }
            }
        }
    }
}
