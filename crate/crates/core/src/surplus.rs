//! Welfare accounting of a coarse policy against granular personalization.
//!
//! Promotions are transfers: the customer values a treatment at what it
//! costs the firm. Consumer surplus moves by the change in that value,
//! producer surplus by the change in profit (minus the regret).

use serde::{Deserialize, Serialize};

use crate::granular::Problem;
use crate::model::{FeasibleTreatment, IndividualRef, SegmentedPolicy};
use crate::{Error, Result};

/// Customer valuation of a treatment.
pub trait Valuation: Sync {
    fn value(&self, ind: &IndividualRef<'_>, treatment: FeasibleTreatment) -> f64;
}

/// Face value for dollar offers, percentage times typical spend for percent
/// offers: in both cases `s_d·t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransferValuation;

impl Valuation for TransferValuation {
    fn value(&self, ind: &IndividualRef<'_>, treatment: FeasibleTreatment) -> f64 {
        ind.cost(treatment.dim, treatment.value)
    }
}

pub fn valuation(ind: &IndividualRef<'_>, treatment: FeasibleTreatment) -> f64 {
    TransferValuation.value(ind, treatment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurplusDelta {
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusAggregate {
    pub members: usize,
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
    /// Percent of members with a strictly positive change.
    pub consumer_positive_pct: f64,
    pub producer_positive_pct: f64,
    pub total_positive_pct: f64,
}

impl SurplusAggregate {
    fn collect<'a>(deltas: impl Iterator<Item = &'a SurplusDelta>) -> Self {
        let mut agg = SurplusAggregate {
            members: 0,
            consumer: 0.0,
            producer: 0.0,
            total: 0.0,
            consumer_positive_pct: 0.0,
            producer_positive_pct: 0.0,
            total_positive_pct: 0.0,
        };
        let mut pos = [0usize; 3];
        for d in deltas {
            agg.members += 1;
            agg.consumer += d.consumer;
            agg.producer += d.producer;
            agg.total += d.total;
            pos[0] += usize::from(d.consumer > 0.0);
            pos[1] += usize::from(d.producer > 0.0);
            pos[2] += usize::from(d.total > 0.0);
        }
        if agg.members > 0 {
            let n = agg.members as f64;
            agg.consumer_positive_pct = 100.0 * pos[0] as f64 / n;
            agg.producer_positive_pct = 100.0 * pos[1] as f64 / n;
            agg.total_positive_pct = 100.0 * pos[2] as f64 / n;
        }
        agg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusReport {
    pub individuals: Vec<SurplusDelta>,
    pub overall: SurplusAggregate,
    /// One row per policy cell, in cell order (the holdout cell last).
    pub by_treatment: Vec<(Option<FeasibleTreatment>, SurplusAggregate)>,
}

pub fn surplus_decomposition(
    problem: &Problem<'_>,
    coarse: &SegmentedPolicy,
) -> Result<SurplusReport> {
    surplus_with(problem, coarse, &TransferValuation)
}

/// Per-individual changes from the granular optimum to the coarse
/// assignment: `ΔCS = v(t̃) − v(t*)`, `ΔPS = π(t̃) − R̄`, `ΔTS = ΔCS + ΔPS`.
/// A held-out individual receives nothing and is valued at zero.
pub fn surplus_with(
    problem: &Problem<'_>,
    coarse: &SegmentedPolicy,
    valuation: &dyn Valuation,
) -> Result<SurplusReport> {
    if coarse.assignment.len() != problem.len() {
        return Err(Error::Structural(format!(
            "policy covers {} individuals, population has {}",
            coarse.assignment.len(),
            problem.len()
        )));
    }
    coarse.validate(problem.pop())?;
    let g = problem.granular();
    let individuals: Vec<SurplusDelta> = (0..problem.len())
        .map(|i| {
            let ind = problem.pop().get(i);
            let best = g.best_treatment(i);
            let (v_coarse, profit) = match coarse.treatment_of(i) {
                Some(t) => (valuation.value(&ind, t), ind.profit_at(t)),
                None => (0.0, 0.0),
            };
            let consumer = v_coarse - valuation.value(&ind, best);
            let producer = profit - g.best_return(i);
            SurplusDelta {
                consumer,
                producer,
                total: consumer + producer,
            }
        })
        .collect();
    let overall = SurplusAggregate::collect(individuals.iter());
    let cells = coarse.treatments.len() + usize::from(coarse.holdout);
    let by_treatment = (0..cells)
        .map(|c| {
            let members = coarse
                .assignment
                .iter()
                .zip(&individuals)
                .filter(|(a, _)| **a == c)
                .map(|(_, d)| d);
            (
                coarse.treatments.get(c).copied(),
                SurplusAggregate::collect(members),
            )
        })
        .collect();
    Ok(SurplusReport {
        individuals,
        overall,
        by_treatment,
    })
}
