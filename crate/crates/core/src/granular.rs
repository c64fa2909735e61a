//! Fully granular personalization: every individual receives their own
//! profit-maximising treatment. This is the profit ceiling every coarse
//! policy is measured against.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::cells::Columns;
use crate::model::{
    policy_profit, FeasibleTreatment, IndividualRef, Population, ProfitReport, SegmentedPolicy,
};
use crate::numeric::golden_section_max;
use crate::Result;

/// Maximiser of `α + β·ln(1 + t) − s·t` on `[0, upper]`.
///
/// The first-order condition `β / (1 + t) = s` gives `t = β/s − 1`; the
/// objective is concave, so clamping the root is exact.
pub fn optimal_treatment(ind: &IndividualRef<'_>, dim: usize, upper: f64) -> f64 {
    (ind.beta[dim] / ind.cost_scale[dim] - 1.0).clamp(0.0, upper)
}

/// Golden-section maximiser of the same objective; an independent check on
/// [`optimal_treatment`] and the route for non-logarithmic responses.
pub fn optimal_treatment_numeric(ind: &IndividualRef<'_>, dim: usize, upper: f64, tol: f64) -> f64 {
    golden_section_max(|x, y| ind.profit_diff(dim, x, y), 0.0, upper, tol)
}

/// `(R̄, best dimension)`; ties go to the lower dimension.
pub fn best_return(ind: &IndividualRef<'_>, upper_bounds: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (d, &upper) in upper_bounds.iter().enumerate() {
        let p = ind.profit(d, optimal_treatment(ind, d, upper));
        if p > best.0 {
            best = (p, d);
        }
    }
    best
}

/// Profit lost by offering `treatment` instead of the individual's optimum.
pub fn regret(ind: &IndividualRef<'_>, best_return: f64, treatment: FeasibleTreatment) -> f64 {
    (best_return - ind.profit_at(treatment)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GranularSolution {
    dims: usize,
    t_star: Vec<f64>,
    best_dim: Vec<usize>,
    best_return: Vec<f64>,
}

impl GranularSolution {
    pub fn compute(pop: &Population) -> Self {
        let dims = pop.dims();
        let bounds = pop.space().upper_bounds();
        let mut t_star = Vec::with_capacity(pop.len() * dims);
        let mut best_dim = Vec::with_capacity(pop.len());
        let mut best_ret = Vec::with_capacity(pop.len());
        for ind in pop.iter() {
            for (d, &upper) in bounds.iter().enumerate() {
                t_star.push(optimal_treatment(&ind, d, upper));
            }
            let (r, d) = best_return(&ind, bounds);
            best_dim.push(d);
            best_ret.push(r);
        }
        Self {
            dims,
            t_star,
            best_dim,
            best_return: best_ret,
        }
    }

    pub fn len(&self) -> usize {
        self.best_dim.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best_dim.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn t_star(&self, i: usize, dim: usize) -> f64 {
        self.t_star[i * self.dims + dim]
    }

    /// Row-major `N × D` optimal levels.
    pub fn t_star_matrix(&self) -> &[f64] {
        &self.t_star
    }

    pub fn best_dim(&self, i: usize) -> usize {
        self.best_dim[i]
    }

    pub fn best_return(&self, i: usize) -> f64 {
        self.best_return[i]
    }

    pub fn best_returns(&self) -> &[f64] {
        &self.best_return
    }

    pub fn best_treatment(&self, i: usize) -> FeasibleTreatment {
        let dim = self.best_dim[i];
        FeasibleTreatment {
            dim,
            value: self.t_star(i, dim),
        }
    }

    /// Regret baseline of individual `i`; `max(R̄_i, 0)` when holding out is allowed.
    #[inline]
    pub fn benchmark(&self, i: usize, holdout: bool) -> f64 {
        if holdout {
            self.best_return[i].max(0.0)
        } else {
            self.best_return[i]
        }
    }

    pub fn total(&self) -> f64 {
        self.best_return.iter().sum()
    }
}

/// A population together with its granular solution; the input every solver
/// in this crate works on.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pop: Cow<'a, Population>,
    granular: GranularSolution,
    columns: Columns,
}

impl<'a> Problem<'a> {
    pub fn new(pop: &'a Population) -> Self {
        let granular = GranularSolution::compute(pop);
        Self {
            columns: Columns::new(pop, &granular),
            pop: Cow::Borrowed(pop),
            granular,
        }
    }

    pub fn owned(pop: Population) -> Problem<'static> {
        let granular = GranularSolution::compute(&pop);
        Problem {
            columns: Columns::new(&pop, &granular),
            pop: Cow::Owned(pop),
            granular,
        }
    }

    /// Same population with every intercept forced to zero.
    pub fn zero_intercept(pop: &Population) -> Problem<'static> {
        Problem::owned(pop.with_zero_intercept())
    }

    pub fn pop(&self) -> &Population {
        &self.pop
    }

    pub fn granular(&self) -> &GranularSolution {
        &self.granular
    }

    pub(crate) fn columns(&self) -> &Columns {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.pop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pop.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.pop.dims()
    }

    pub fn upper_bounds(&self) -> &[f64] {
        self.pop.space().upper_bounds()
    }

    pub fn report(&self, policy: &SegmentedPolicy) -> Result<ProfitReport> {
        policy_profit(&self.pop, &self.granular, policy)
    }
}

#[derive(Debug, Clone)]
pub struct GranularPolicy {
    pub policy: SegmentedPolicy,
    pub report: ProfitReport,
    /// Distinct treatments after rounding levels to three significant figures.
    pub unique_treatments_3sf: usize,
}

/// Every individual at `(best dim, t*)`. Identical optima share one segment.
pub fn granular_policy(problem: &Problem<'_>) -> Result<GranularPolicy> {
    let g = problem.granular();
    let mut index: HashMap<(usize, u64), usize> = HashMap::new();
    let mut treatments = Vec::new();
    let mut assignment = Vec::with_capacity(g.len());
    let mut rounded: HashMap<(usize, u64), ()> = HashMap::new();
    for i in 0..g.len() {
        let t = g.best_treatment(i);
        let next = treatments.len();
        let cell = *index.entry((t.dim, t.value.to_bits())).or_insert(next);
        if cell == next {
            treatments.push(t);
        }
        assignment.push(cell);
        rounded.insert((t.dim, round_significant(t.value, 3).to_bits()), ());
    }
    let policy = SegmentedPolicy::from_assignment(treatments, assignment, false);
    let report = problem.report(&policy)?;
    Ok(GranularPolicy {
        policy,
        report,
        unique_treatments_3sf: rounded.len(),
    })
}

fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Individual, TreatmentSpace};
    use approx::assert_abs_diff_eq;

    fn ind(alpha: &[f64], beta: &[f64], s: &[f64]) -> Individual {
        Individual::new("i", alpha.to_vec(), beta.to_vec(), s.to_vec())
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(
            optimal_treatment(&ind(&[0.0], &[3.0], &[1.0]).view(), 0, 5.0),
            2.0
        );
        assert_eq!(
            optimal_treatment(&ind(&[0.0], &[0.5], &[1.0]).view(), 0, 5.0),
            0.0
        );
        assert_eq!(
            optimal_treatment(&ind(&[0.0], &[12.0], &[1.0]).view(), 0, 5.0),
            5.0
        );
    }

    #[test]
    fn numeric_examples() {
        let t = optimal_treatment_numeric(&ind(&[0.0], &[3.0], &[1.0]).view(), 0, 5.0, 1e-10);
        assert!((t - 2.0).abs() < 1e-9);
        let t0 = optimal_treatment_numeric(&ind(&[0.0], &[0.0], &[1.0]).view(), 0, 5.0, 1e-10);
        assert!(t0 < 1e-9);
    }

    #[test]
    fn best_return_examples() {
        let (r, d) = best_return(&ind(&[0.0], &[3.0], &[1.0]).view(), &[5.0]);
        assert_abs_diff_eq!(r, 1.295_836_866_004_329, epsilon = 1e-12);
        assert_eq!(d, 0);
        let (_, d) = best_return(
            &ind(&[0.1, 0.1], &[3.0, 3.0], &[1.0, 1.0]).view(),
            &[5.0, 5.0],
        );
        assert_eq!(d, 0);
        let (r, _) = best_return(
            &ind(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.2]).view(),
            &[5.0, 20.0],
        );
        assert_eq!(r, 0.0);
    }

    #[test]
    fn regret_examples() {
        let i = ind(&[0.0], &[3.0], &[1.0]);
        let (r, _) = best_return(&i.view(), &[5.0]);
        assert_eq!(
            regret(&i.view(), r, FeasibleTreatment { dim: 0, value: 2.0 }),
            0.0
        );
        assert_abs_diff_eq!(
            regret(&i.view(), r, FeasibleTreatment { dim: 0, value: 1.0 }),
            0.216_395_324_324_493,
            epsilon = 1e-12
        );
        let flat = ind(&[0.0], &[0.0], &[0.7]);
        let (r0, _) = best_return(&flat.view(), &[5.0]);
        assert_abs_diff_eq!(
            regret(&flat.view(), r0, FeasibleTreatment { dim: 0, value: 5.0 }),
            3.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn granular_policy_dedups_identical_individuals() {
        let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
        let pop = Population::from_individuals(space, (0..10).map(|_| ind(&[0.0], &[3.0], &[1.0])))
            .unwrap();
        let problem = Problem::new(&pop);
        let g = granular_policy(&problem).unwrap();
        assert_eq!(g.policy.num_treatments(), 1);
        assert_eq!(g.unique_treatments_3sf, 1);
        assert_eq!(g.report.total_regret, 0.0);
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(1.23456, 3), 1.23);
        assert_eq!(round_significant(12.3456, 3), 12.3);
        assert_eq!(round_significant(0.0, 3), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn optimum_beats_sampled_levels(
                alpha in -2.0..2.0f64,
                beta in 0.0..10.0f64,
                s in 0.05..5.0f64,
                upper in 0.5..30.0f64,
                probes in proptest::collection::vec(0.0..1.0f64, 100),
            ) {
                let i = ind(&[alpha], &[beta], &[s]);
                let v = i.view();
                let t = optimal_treatment(&v, 0, upper);
                prop_assert!((0.0..=upper).contains(&t));
                for u in probes {
                    prop_assert!(v.profit(0, t) >= v.profit(0, u * upper));
                }
            }

            #[test]
            fn closed_form_matches_golden_section(beta in 0.0..10.0f64, s in 0.05..5.0f64, upper in 0.5..30.0f64) {
                let i = ind(&[0.0], &[beta], &[s]);
                let exact = optimal_treatment(&i.view(), 0, upper);
                let numeric = optimal_treatment_numeric(&i.view(), 0, upper, 1e-11);
                prop_assert!((exact - numeric).abs() <= 1e-8);
            }

            #[test]
            fn optimum_is_monotone_in_sensitivity_per_cost(
                beta in 0.0..10.0f64,
                s in 0.05..5.0f64,
                factor in 1.0..3.0f64,
                upper in 0.5..30.0f64,
            ) {
                let lo = optimal_treatment(&ind(&[0.0], &[beta], &[s]).view(), 0, upper);
                let hi = optimal_treatment(&ind(&[0.0], &[beta * factor], &[s]).view(), 0, upper);
                prop_assert!(hi >= lo);
            }

            #[test]
            fn regret_is_non_negative(
                pop in crate::testing::population(1..20),
                offer in crate::testing::treatment(),
            ) {
                let g = GranularSolution::compute(&pop);
                for (i, person) in pop.iter().enumerate() {
                    prop_assert!(regret(&person, g.best_return(i), offer) >= 0.0);
                }
            }
        }
    }
}
