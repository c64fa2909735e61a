//! Assignment sweep and per-cell sufficient statistics.
//!
//! Every quantity the update step needs is a sum over cell members of
//! `α_d`, `β_d`, `s_d` or `t*_d`, so one pass over the population suffices.
//! The pass is split into fixed-size chunks whose partial tables are merged in
//! chunk order; results do not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::granular::Problem;
use crate::model::FeasibleTreatment;
use crate::numeric::grid_max;

pub(crate) const CHUNK: usize = 16_384;

/// How a cell's candidate level is computed before dimension reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Mean of the members' granular optima, per dimension.
    Barycenter,
    /// The cell-profit maximiser `clamp(Σβ/Σs − 1, 0, t̄)`, per dimension.
    Exact,
}

impl std::str::FromStr for UpdateRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "barycenter" => Ok(UpdateRule::Barycenter),
            "exact" => Ok(UpdateRule::Exact),
            other => Err(crate::Error::Config(format!(
                "unknown update rule '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CellTable {
    dims: usize,
    count: Vec<usize>,
    /// Per cell: `[Σα (D), Σβ (D), Σs (D), Σt* (D)]`.
    sums: Vec<f64>,
    pub total_profit: f64,
    pub total_regret: f64,
    pub squared_regret: f64,
}

impl CellTable {
    pub fn new(cells: usize, dims: usize) -> Self {
        Self {
            dims,
            count: vec![0; cells],
            sums: vec![0.0; cells * 4 * dims],
            total_profit: 0.0,
            total_regret: 0.0,
            squared_regret: 0.0,
        }
    }

    /// Single-cell table over an explicit member list.
    pub fn from_members(problem: &Problem<'_>, members: &[usize]) -> Self {
        let mut table = Self::new(1, problem.dims());
        for &i in members {
            table.add_member(problem, 0, i);
        }
        table
    }

    /// Table for a fixed assignment into `cells` cells.
    pub fn from_assignment(problem: &Problem<'_>, assignment: &[usize], cells: usize) -> Self {
        let mut table = Self::new(cells, problem.dims());
        for (i, &c) in assignment.iter().enumerate() {
            table.add_member(problem, c, i);
        }
        table
    }

    #[inline]
    fn add_member(&mut self, problem: &Problem<'_>, cell: usize, i: usize) {
        let d = self.dims;
        let pop = problem.pop();
        let base = cell * 4 * d;
        let rows = i * d..(i + 1) * d;
        let t_star = &problem.granular().t_star_matrix()[rows.clone()];
        let cols = [
            &pop.alpha()[rows.clone()],
            &pop.beta()[rows.clone()],
            &pop.cost_scale()[rows],
            t_star,
        ];
        for (k, col) in cols.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                self.sums[base + k * d + j] += v;
            }
        }
        self.count[cell] += 1;
    }

    fn merge(&mut self, other: &CellTable) {
        for (a, b) in self.count.iter_mut().zip(&other.count) {
            *a += b;
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.total_profit += other.total_profit;
        self.total_regret += other.total_regret;
        self.squared_regret += other.squared_regret;
    }

    /// Moves member `i` from cell `from` to cell `to`.
    pub fn move_member(&mut self, problem: &Problem<'_>, i: usize, from: usize, to: usize) {
        self.shift(problem, from, i, -1.0);
        self.count[from] -= 1;
        self.shift(problem, to, i, 1.0);
        self.count[to] += 1;
    }

    fn shift(&mut self, problem: &Problem<'_>, cell: usize, i: usize, sign: f64) {
        let d = self.dims;
        let base = cell * 4 * d;
        let mut row = Vec::with_capacity(4 * d);
        member_row(problem, i, &mut row);
        for (s, v) in self.sums[base..base + 4 * d].iter_mut().zip(&row) {
            *s += sign * v;
        }
    }

    /// Cell `l` with member `i` added (`sign = 1`) or removed (`sign = -1`),
    /// built in `scratch`.
    pub fn cell_with<'s>(
        &self,
        problem: &Problem<'_>,
        l: usize,
        i: usize,
        sign: f64,
        scratch: &'s mut Vec<f64>,
    ) -> CellView<'s> {
        let d = self.dims;
        member_row(problem, i, scratch);
        for (v, s) in scratch
            .iter_mut()
            .zip(&self.sums[l * 4 * d..(l + 1) * 4 * d])
        {
            *v = s + sign * *v;
        }
        let count = if sign > 0.0 {
            self.count[l] + 1
        } else {
            self.count[l] - 1
        };
        CellView {
            count,
            alpha: &scratch[..d],
            beta: &scratch[d..2 * d],
            cost: &scratch[2 * d..3 * d],
            t_star: &scratch[3 * d..],
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.count
    }

    pub fn cell(&self, l: usize) -> CellView<'_> {
        let d = self.dims;
        let s = &self.sums[l * 4 * d..(l + 1) * 4 * d];
        CellView {
            count: self.count[l],
            alpha: &s[..d],
            beta: &s[d..2 * d],
            cost: &s[2 * d..3 * d],
            t_star: &s[3 * d..],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CellView<'a> {
    pub count: usize,
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
    pub cost: &'a [f64],
    pub t_star: &'a [f64],
}

/// Member `i`'s `[α (D), β (D), s (D), t* (D)]`.
fn member_row(problem: &Problem<'_>, i: usize, out: &mut Vec<f64>) {
    let d = problem.dims();
    let pop = problem.pop();
    let rows = i * d..(i + 1) * d;
    out.clear();
    out.extend_from_slice(&pop.alpha()[rows.clone()]);
    out.extend_from_slice(&pop.beta()[rows.clone()]);
    out.extend_from_slice(&pop.cost_scale()[rows.clone()]);
    out.extend_from_slice(&problem.granular().t_star_matrix()[rows]);
}

impl CellView<'_> {
    /// Cell profit at the exact-rule treatment.
    pub fn best_profit(&self, bounds: &[f64], step: f64) -> f64 {
        let t = self.reduce(Some(&[]), UpdateRule::Exact, bounds, step);
        self.profit(t.dim, t.value)
    }

    /// Total member profit at level `t` in dimension `d`.
    #[inline]
    pub fn profit(&self, d: usize, t: f64) -> f64 {
        self.alpha[d] + self.beta[d] * t.ln_1p() - self.cost[d] * t
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.t_star.iter().map(|s| s / n).collect()
    }

    /// Maximiser of the cell's total profit in dimension `d`; the segment
    /// first-order condition `Σβ / (1 + t) = Σs`, clamped.
    pub fn optimal_level(&self, d: usize, upper: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.beta[d] / self.cost[d] - 1.0).clamp(0.0, upper)
    }

    /// Best grid level of the cell in dimension `d`: by concavity one of the
    /// two grid neighbours of the continuous optimum.
    pub fn optimal_grid_level(&self, d: usize, upper: f64, step: f64) -> f64 {
        let top = grid_max(upper, step);
        let opt = self.optimal_level(d, upper);
        let lo = ((opt / step).floor() * step).min(top);
        let hi = (lo + step).min(top);
        if self.profit(d, hi) > self.profit(d, lo) {
            hi
        } else {
            lo
        }
    }

    /// Candidate level in `d` under `rule`, followed by the reduction to the
    /// most profitable single dimension (ties to the lower index).
    ///
    /// With `step > 0`, barycenter candidates are rounded to the nearest grid
    /// point; exact candidates move to the best grid point.
    pub fn reduce(
        &self,
        candidate: Option<&[f64]>,
        rule: UpdateRule,
        bounds: &[f64],
        step: f64,
    ) -> FeasibleTreatment {
        let bary;
        let cand = match candidate {
            Some(c) => c,
            None => {
                bary = self.barycenter();
                &bary
            }
        };
        let mut best = (f64::NEG_INFINITY, FeasibleTreatment { dim: 0, value: 0.0 });
        for (d, &upper) in bounds.iter().enumerate() {
            let level = match (rule, step > 0.0) {
                (UpdateRule::Barycenter, false) => cand[d].clamp(0.0, upper),
                (UpdateRule::Barycenter, true) => {
                    crate::numeric::round_to_step(cand[d], step).clamp(0.0, grid_max(upper, step))
                }
                (UpdateRule::Exact, false) => self.optimal_level(d, upper),
                (UpdateRule::Exact, true) => self.optimal_grid_level(d, upper, step),
            };
            let p = self.profit(d, level);
            if p > best.0 {
                best = (
                    p,
                    FeasibleTreatment {
                        dim: d,
                        value: level,
                    },
                );
            }
        }
        best.1
    }
}

/// Dimension-major copies of the per-individual inputs, so that the sweep
/// reads contiguous memory for every offered treatment.
#[derive(Debug, Clone)]
pub(crate) struct Columns {
    /// `[quantity][dim][individual]` for `α`, `β`, `s`, `t*`.
    data: [Vec<Vec<f64>>; 4],
}

impl Columns {
    pub fn new(
        pop: &crate::model::Population,
        granular: &crate::granular::GranularSolution,
    ) -> Self {
        let d = pop.dims();
        let split = |src: &[f64]| -> Vec<Vec<f64>> {
            (0..d)
                .map(|q| src.iter().skip(q).step_by(d).copied().collect())
                .collect()
        };
        Self {
            data: [
                split(pop.alpha()),
                split(pop.beta()),
                split(pop.cost_scale()),
                split(granular.t_star_matrix()),
            ],
        }
    }
}

/// Individuals handled together inside a chunk, sized so a block's columns
/// stay in cache between the argmax and accumulation passes.
const BLOCK: usize = 1024;

/// Assigns every individual to their most profitable offered treatment (ties
/// to the lowest index; with `holdout`, to cell `L` when every offer loses
/// money) and accumulates the per-cell table. Sums of optimal levels are
/// only collected when `levels` is set.
pub(crate) fn sweep(
    problem: &Problem<'_>,
    treatments: &[FeasibleTreatment],
    holdout: bool,
    levels: bool,
    assignment: &mut [usize],
) -> CellTable {
    let dims = problem.dims();
    let l = treatments.len();
    let cells = l + usize::from(holdout);
    let offers: Vec<(usize, f64, f64)> = treatments
        .iter()
        .map(|t| (t.dim, t.value.ln_1p(), t.value))
        .collect();
    let cols = &problem.columns().data;
    let best_return = problem.granular().best_returns();
    let quantities = if levels { 4 } else { 3 };

    let partials: Vec<CellTable> = assignment
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(c, out)| {
            let mut table = CellTable::new(cells, dims);
            let mut lanes = Lanes::new(cells, dims);
            let mut best = [0.0f64; BLOCK];
            for (b, out) in out.chunks_mut(BLOCK).enumerate() {
                let first = c * CHUNK + b * BLOCK;
                let range = first..first + out.len();
                let best = &mut best[..out.len()];
                best.fill(f64::NEG_INFINITY);
                // Branch-free argmax, one offered treatment at a time; the
                // strict comparison keeps the lowest index among ties.
                for (j, &(d, lg, v)) in offers.iter().enumerate() {
                    let terms = cols[0][d][range.clone()]
                        .iter()
                        .zip(&cols[1][d][range.clone()])
                        .zip(&cols[2][d][range.clone()]);
                    for ((bk, ok), ((a, b), s)) in best.iter_mut().zip(out.iter_mut()).zip(terms) {
                        let p = a + b * lg - s * v;
                        let mask = 0usize.wrapping_sub(usize::from(p > *bk));
                        *ok = (*ok & !mask) | (j & mask);
                        *bk = bk.max(p);
                    }
                }
                let bench = &best_return[range.clone()];
                for k in 0..out.len() {
                    let (mut p, mut r) = (best[k], bench[k]);
                    if holdout {
                        r = r.max(0.0);
                        if p < 0.0 {
                            out[k] = l;
                            p = 0.0;
                        }
                    }
                    let regret = (r - p).max(0.0);
                    table.total_profit += p;
                    table.total_regret += regret;
                    table.squared_regret += regret * regret;
                }
                lanes.accumulate(cols, quantities, range, out);
            }
            lanes.fold_into(&mut table);
            table
        })
        .collect();

    let mut table = CellTable::new(cells, dims);
    for p in &partials {
        table.merge(p);
    }
    table
}

const LANES: usize = 4;

/// Per-chunk cell sums split over `LANES` interleaved copies, so that
/// neighbouring members of one cell update different slots. Lanes are folded
/// in a fixed order at the end of the chunk.
struct Lanes {
    width: usize,
    stride: usize,
    count: Vec<usize>,
    sums: Vec<f64>,
}

impl Lanes {
    fn new(cells: usize, dims: usize) -> Self {
        Self {
            width: 4 * dims,
            stride: cells * 4 * dims,
            count: vec![0; LANES * cells],
            sums: vec![0.0; LANES * cells * 4 * dims],
        }
    }

    /// Adds each member's `α`, `β`, `s` (and `t*`) to their cell.
    fn accumulate(
        &mut self,
        cols: &[Vec<Vec<f64>>; 4],
        quantities: usize,
        range: std::ops::Range<usize>,
        out: &[usize],
    ) {
        let used = quantities * self.width / 4;
        let xs: Vec<&[f64]> = cols
            .iter()
            .take(quantities)
            .flat_map(|col| col.iter().map(|x| &x[range.clone()]))
            .collect();
        for (k, &g) in out.iter().enumerate() {
            self.count[(k % LANES) * (self.stride / self.width) + g] += 1;
        }
        match used {
            6 => self.rows::<6>(&xs, out),
            8 => self.rows::<8>(&xs, out),
            _ => {
                for (k, &g) in out.iter().enumerate() {
                    let base = (k % LANES) * self.stride + g * self.width;
                    for (acc, x) in self.sums[base..base + used].iter_mut().zip(&xs) {
                        *acc += x[k];
                    }
                }
            }
        }
    }

    /// `accumulate` with the column count known at compile time (two dimensions).
    fn rows<const U: usize>(&mut self, xs: &[&[f64]], out: &[usize]) {
        let xs: [&[f64]; U] = std::array::from_fn(|q| &xs[q][..out.len()]);
        for (k, &g) in out.iter().enumerate() {
            let base = (k % LANES) * self.stride + g * self.width;
            let sums = &mut self.sums[base..base + U];
            for q in 0..U {
                sums[q] += xs[q][k];
            }
        }
    }

    fn fold_into(&self, table: &mut CellTable) {
        let cells = table.count.len();
        for lane in 0..LANES {
            for (a, b) in table.count.iter_mut().zip(&self.count[lane * cells..]) {
                *a += b;
            }
            let sums = &self.sums[lane * self.stride..(lane + 1) * self.stride];
            for (a, b) in table.sums.iter_mut().zip(sums) {
                *a += b;
            }
        }
    }
}

/// Profit of individual `i` under `treatments[cell]` (zero for the holdout cell).
#[inline]
pub(crate) fn profit_in_cell(
    problem: &Problem<'_>,
    treatments: &[FeasibleTreatment],
    i: usize,
    cell: usize,
) -> f64 {
    match treatments.get(cell) {
        Some(t) => problem.pop().get(i).profit_at(*t),
        None => 0.0,
    }
}
