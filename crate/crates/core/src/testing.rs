//! Shared proptest strategies.

use proptest::prelude::*;

use crate::model::{FeasibleTreatment, Individual, Population, TreatmentSpace};

/// Two-dimension populations on bounds (5, 20): dollar cost scale 1,
/// percent cost scale in (0.1, 1).
pub fn population(n: std::ops::Range<usize>) -> impl Strategy<Value = Population> {
    proptest::collection::vec(
        (
            -1.0..1.0f64,
            -1.0..1.0f64,
            0.0..6.0f64,
            0.0..3.0f64,
            0.1..1.0f64,
        ),
        n,
    )
    .prop_map(|rows| {
        let space = TreatmentSpace::with_bounds(&[5.0, 20.0]).unwrap();
        let people = rows.iter().enumerate().map(|(i, &(a1, a2, b1, b2, s2))| {
            Individual::new(format!("c{i}"), vec![a1, a2], vec![b1, b2], vec![1.0, s2])
        });
        Population::from_individuals(space, people).unwrap()
    })
}

/// A feasible treatment on bounds (5, 20).
pub fn treatment() -> impl Strategy<Value = FeasibleTreatment> {
    (0..2usize, 0.0..1.0f64).prop_map(|(dim, u)| FeasibleTreatment {
        dim,
        value: u * [5.0, 20.0][dim],
    })
}
