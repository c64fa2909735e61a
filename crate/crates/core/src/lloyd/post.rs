//! Menu-cost selection of `L`, ex-post rounding and first-order checks.

use serde::{Deserialize, Serialize};

use super::{Solution, Solver, SolverConfig};
use crate::cells::{sweep, CellTable};
use crate::granular::Problem;
use crate::model::{FeasibleTreatment, ProfitReport, SegmentedPolicy};
use crate::numeric::{grid_max, round_to_step};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MenuSolution {
    pub best_l: usize,
    /// Solutions for `L = 1..=l_max`.
    pub levels: Vec<Solution>,
    /// `total_profit − ψ(L)` per level.
    pub net_profit: Vec<f64>,
}

impl MenuSolution {
    pub fn best(&self) -> &Solution {
        &self.levels[self.best_l - 1]
    }
}

/// Warm-started solutions for `L = 1..=l_max`, selecting the `L` with the
/// highest profit net of the menu cost. Ties go to the larger `L`.
pub fn solve_menu(
    problem: &Problem<'_>,
    l_max: usize,
    config: &SolverConfig,
) -> Result<MenuSolution> {
    if l_max == 0 {
        return Err(Error::Config("menu search needs at least one level".into()));
    }
    let solver = Solver::new(problem, config.clone().with_treatments(l_max))?;
    let levels = solver.solve_path(l_max, &[])?;
    let net_profit: Vec<f64> = levels.iter().map(Solution::net_profit).collect();
    let mut best_l = 1;
    for (k, v) in net_profit.iter().enumerate() {
        if *v >= net_profit[best_l - 1] {
            best_l = k + 1;
        }
    }
    Ok(MenuSolution {
        best_l,
        levels,
        net_profit,
    })
}

#[derive(Debug, Clone)]
pub struct RoundedPolicy {
    pub policy: SegmentedPolicy,
    pub report: ProfitReport,
    /// Distinct treatments left after collisions merge.
    pub effective_treatments: usize,
}

/// Rounds every offered level to the nearest multiple of `step` (capped at
/// the largest grid point inside the bound), merges collisions keeping the
/// first occurrence, and reassigns.
pub fn round_policy_expost(
    problem: &Problem<'_>,
    policy: &SegmentedPolicy,
    step: f64,
) -> Result<RoundedPolicy> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!(
            "rounding step {step} must be positive"
        )));
    }
    policy.validate(problem.pop())?;
    let bounds = problem.upper_bounds();
    let mut merged: Vec<FeasibleTreatment> = Vec::new();
    for t in &policy.treatments {
        let value = round_to_step(t.value, step).clamp(0.0, grid_max(bounds[t.dim], step));
        let r = FeasibleTreatment { dim: t.dim, value };
        if !merged.iter().any(|u| u.same_as(&r)) {
            merged.push(r);
        }
    }
    let mut assignment = vec![0; problem.len()];
    sweep(problem, &merged, policy.holdout, false, &mut assignment);
    let effective_treatments = merged.len();
    let rounded = SegmentedPolicy::from_assignment(merged, assignment, policy.holdout);
    let report = problem.report(&rounded)?;
    Ok(RoundedPolicy {
        policy: rounded,
        report,
        effective_treatments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocStatus {
    Interior,
    Boundary,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFoc {
    pub segment: usize,
    pub status: FocStatus,
    /// `|Σβ/(1+t̃) − Σs| / Σs`; zero unless interior.
    pub residual: f64,
}

/// Normalized residual of the segment first-order condition
/// `Σ_{i∈cell} β_{i,d}/(1+t̃) = Σ_{i∈cell} s_{i,d}` for every offered treatment.
pub fn foc_residual(problem: &Problem<'_>, policy: &SegmentedPolicy) -> Result<Vec<SegmentFoc>> {
    policy.validate(problem.pop())?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); policy.treatments.len()];
    for (i, &c) in policy.assignment.iter().enumerate() {
        if let Some(m) = members.get_mut(c) {
            m.push(i);
        }
    }
    let bounds = problem.upper_bounds();
    Ok(policy
        .treatments
        .iter()
        .zip(&members)
        .enumerate()
        .map(|(segment, (t, m))| {
            if m.is_empty() {
                return SegmentFoc {
                    segment,
                    status: FocStatus::Empty,
                    residual: 0.0,
                };
            }
            if t.value <= 0.0 || t.value >= bounds[t.dim] {
                return SegmentFoc {
                    segment,
                    status: FocStatus::Boundary,
                    residual: 0.0,
                };
            }
            let table = CellTable::from_members(problem, m);
            let cell = table.cell(0);
            let d = t.dim;
            let residual = (cell.beta[d] / (1.0 + t.value) - cell.cost[d]).abs() / cell.cost[d];
            SegmentFoc {
                segment,
                status: FocStatus::Interior,
                residual,
            }
        })
        .collect())
}
