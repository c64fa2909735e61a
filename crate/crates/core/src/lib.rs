//! Coarse personalization of continuous, multi-dimensional treatments.
//!
//! Given per-individual concave response curves `α + β·ln(1 + t)` and linear
//! treatment costs `s·t`, pick `L` feasible treatments (non-zero in exactly one
//! dimension) and assign every individual to one of them so that the profit
//! lost relative to fully granular targeting is as small as possible.
//!
//! The crate is organised by role:
//!
//! - [`model`]: domain types and the profit primitives.
//! - [`calibrate`]: fitting response curves from per-arm effect estimates.
//! - [`granular`]: per-individual optima and the best-return benchmark.
//! - [`lloyd`]: the adapted Lloyd solver (assign / update / reduce).
//! - [`oracle`]: brute-force grid search and a continuous refinement oracle.
//! - [`benchmarks`]: k-means segmentation, A/B subset policies, blanket offers.
//! - [`surplus`]: consumer / producer / total surplus deltas.
//! - [`harness`]: synthetic populations, file formats, bootstrap, experiments.

pub mod benchmarks;
pub mod calibrate;
mod cells;
mod error;
pub mod granular;
pub mod harness;
pub mod lloyd;
pub mod model;
pub mod numeric;
pub mod oracle;
mod subsets;
pub mod surplus;
#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use granular::{GranularSolution, Problem};
pub use model::{
    FeasibleTreatment, Individual, IndividualRef, Population, ProfitReport, SegmentedPolicy,
    TreatmentSpace,
};
