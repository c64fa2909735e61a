//! Domain types and the per-individual response, cost and profit primitives.
//!
//! Treatment dimensions are indexed from zero in code. File formats and the
//! command line use one-based column suffixes (`beta_1`, `beta_2`, ...).
//!
//! An individual's response to level `t` in dimension `d` is
//! `τ_d(t) = α_d + β_d·ln(1 + t)` and the firm's cost is `c_d(t) = s_d·t`,
//! so incremental profit `π_d(t) = τ_d(t) − c_d(t)` is strictly concave in
//! `t` whenever `β_d > 0`.

use serde::{Deserialize, Serialize};

use crate::granular::GranularSolution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpace {
    upper_bounds: Vec<f64>,
    unit_labels: Vec<String>,
}

impl TreatmentSpace {
    pub fn new(upper_bounds: Vec<f64>, unit_labels: Vec<String>) -> Result<Self> {
        if upper_bounds.is_empty() {
            return Err(Error::Config(
                "treatment space needs at least one dimension".into(),
            ));
        }
        if upper_bounds.len() != unit_labels.len() {
            return Err(Error::Config(format!(
                "{} upper bounds but {} unit labels",
                upper_bounds.len(),
                unit_labels.len()
            )));
        }
        if let Some(b) = upper_bounds.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::Config(format!(
                "upper bound {b} must be positive and finite"
            )));
        }
        Ok(Self {
            upper_bounds,
            unit_labels,
        })
    }

    /// Bounds with default labels: `dollar`/`percent` for two dimensions,
    /// `dim1`, `dim2`, ... otherwise.
    pub fn with_bounds(upper_bounds: &[f64]) -> Result<Self> {
        let labels = if upper_bounds.len() == 2 {
            vec!["dollar".to_string(), "percent".to_string()]
        } else {
            (1..=upper_bounds.len())
                .map(|d| format!("dim{d}"))
                .collect()
        };
        Self::new(upper_bounds.to_vec(), labels)
    }

    /// Dollar-off up to 5 and percent-off up to 20 points.
    pub fn promotions() -> Self {
        Self::with_bounds(&[5.0, 20.0]).expect("static bounds are valid")
    }

    pub fn dims(&self) -> usize {
        self.upper_bounds.len()
    }

    pub fn upper_bound(&self, dim: usize) -> f64 {
        self.upper_bounds[dim]
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper_bounds
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    /// Checks `dim < D` and `0 ≤ t ≤ t̄_dim`.
    pub fn check(&self, dim: usize, t: f64) -> Result<()> {
        if dim >= self.dims() {
            return Err(Error::Domain(format!(
                "dimension {dim} outside 0..{}",
                self.dims()
            )));
        }
        if !(t >= 0.0 && t <= self.upper_bounds[dim]) {
            return Err(Error::Domain(format!(
                "treatment level {t} outside [0, {}] in dimension {dim}",
                self.upper_bounds[dim]
            )));
        }
        Ok(())
    }
}

/// A treatment that is non-zero in at most one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleTreatment {
    pub dim: usize,
    pub value: f64,
}

impl FeasibleTreatment {
    pub fn new(space: &TreatmentSpace, dim: usize, value: f64) -> Result<Self> {
        space.check(dim, value)?;
        Ok(Self { dim, value })
    }

    /// The full `D`-vector `(0, …, value, …, 0)`.
    pub fn to_vector(self, dims: usize) -> Vec<f64> {
        let mut v = vec![0.0; dims];
        v[self.dim] = self.value;
        v
    }

    /// Identity in `(dim, value)`, bitwise on the value.
    pub fn same_as(&self, other: &FeasibleTreatment) -> bool {
        self.dim == other.dim && self.value.to_bits() == other.value.to_bits()
    }
}

/// Owned individual record, used to build populations.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub cost_scale: Vec<f64>,
    pub covariates: Vec<f64>,
}

impl Individual {
    pub fn new(
        id: impl Into<String>,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        cost_scale: Vec<f64>,
    ) -> Self {
        Self {
            id: id.into(),
            alpha,
            beta,
            cost_scale,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn view(&self) -> IndividualRef<'_> {
        IndividualRef {
            id: &self.id,
            alpha: &self.alpha,
            beta: &self.beta,
            cost_scale: &self.cost_scale,
            covariates: &self.covariates,
        }
    }
}

/// Borrowed view of one individual inside a [`Population`].
#[derive(Debug, Clone, Copy)]
pub struct IndividualRef<'a> {
    pub id: &'a str,
    pub alpha: &'a [f64],
    pub beta: &'a [f64],
    pub cost_scale: &'a [f64],
    pub covariates: &'a [f64],
}

impl IndividualRef<'_> {
    #[inline]
    pub fn cate(&self, dim: usize, t: f64) -> f64 {
        self.alpha[dim] + self.beta[dim] * t.ln_1p()
    }

    #[inline]
    pub fn cost(&self, dim: usize, t: f64) -> f64 {
        self.cost_scale[dim] * t
    }

    #[inline]
    pub fn profit(&self, dim: usize, t: f64) -> f64 {
        self.cate(dim, t) - self.cost(dim, t)
    }

    #[inline]
    pub fn profit_at(&self, treatment: FeasibleTreatment) -> f64 {
        self.profit(treatment.dim, treatment.value)
    }

    /// `π(x) − π(y)` in one dimension, computed without cancellation.
    #[inline]
    pub fn profit_diff(&self, dim: usize, x: f64, y: f64) -> f64 {
        self.beta[dim] * crate::numeric::ln1p_diff(x, y) - self.cost_scale[dim] * (x - y)
    }
}

/// `τ_d(t) = α + β·ln(1 + t)`, with domain checks.
pub fn cate_value(
    ind: &IndividualRef<'_>,
    space: &TreatmentSpace,
    dim: usize,
    t: f64,
) -> Result<f64> {
    space.check(dim, t)?;
    Ok(ind.cate(dim, t))
}

/// `c_d(t) = s·t`, with domain checks.
pub fn treatment_cost(
    ind: &IndividualRef<'_>,
    space: &TreatmentSpace,
    dim: usize,
    t: f64,
) -> Result<f64> {
    space.check(dim, t)?;
    Ok(ind.cost(dim, t))
}

/// `π_d(t) = τ_d(t) − c_d(t)`, with domain checks.
pub fn incremental_profit(
    ind: &IndividualRef<'_>,
    space: &TreatmentSpace,
    dim: usize,
    t: f64,
) -> Result<f64> {
    space.check(dim, t)?;
    Ok(ind.profit(dim, t))
}

/// A population stored column-wise: every per-dimension field is an `N × D`
/// row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    space: TreatmentSpace,
    ids: Vec<String>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    cost_scale: Vec<f64>,
    covariate_names: Vec<String>,
    covariates: Vec<f64>,
}

impl Population {
    pub fn new(space: TreatmentSpace) -> Self {
        Self::with_covariates(space, Vec::new())
    }

    pub fn with_covariates(space: TreatmentSpace, covariate_names: Vec<String>) -> Self {
        Self {
            space,
            ids: Vec::new(),
            alpha: Vec::new(),
            beta: Vec::new(),
            cost_scale: Vec::new(),
            covariate_names,
            covariates: Vec::new(),
        }
    }

    pub fn from_individuals(
        space: TreatmentSpace,
        individuals: impl IntoIterator<Item = Individual>,
    ) -> Result<Self> {
        let mut pop = Self::new(space);
        for ind in individuals {
            pop.push(ind)?;
        }
        Ok(pop)
    }

    /// Validates and appends one individual. Ids are not checked for
    /// uniqueness here; file loaders do that.
    pub fn push(&mut self, ind: Individual) -> Result<()> {
        let d = self.space.dims();
        if ind.alpha.len() != d || ind.beta.len() != d || ind.cost_scale.len() != d {
            return Err(Error::Structural(format!(
                "individual {} has field lengths ({}, {}, {}) for {d} dimensions",
                ind.id,
                ind.alpha.len(),
                ind.beta.len(),
                ind.cost_scale.len()
            )));
        }
        if ind.covariates.len() != self.covariate_names.len() {
            return Err(Error::Structural(format!(
                "individual {} has {} covariates, population expects {}",
                ind.id,
                ind.covariates.len(),
                self.covariate_names.len()
            )));
        }
        if ind
            .alpha
            .iter()
            .chain(&ind.covariates)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain(format!(
                "individual {} has non-finite values",
                ind.id
            )));
        }
        if ind.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Domain(format!(
                "individual {} has a negative or non-finite sensitivity",
                ind.id
            )));
        }
        if ind.cost_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Domain(format!(
                "individual {} has a non-positive cost scale",
                ind.id
            )));
        }
        self.ids.push(ind.id);
        self.alpha.extend_from_slice(&ind.alpha);
        self.beta.extend_from_slice(&ind.beta);
        self.cost_scale.extend_from_slice(&ind.cost_scale);
        self.covariates.extend_from_slice(&ind.covariates);
        Ok(())
    }

    pub fn space(&self) -> &TreatmentSpace {
        &self.space
    }

    pub fn dims(&self) -> usize {
        self.space.dims()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_covariates(&self) -> bool {
        !self.covariate_names.is_empty()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn cost_scale(&self) -> &[f64] {
        &self.cost_scale
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn get(&self, i: usize) -> IndividualRef<'_> {
        let d = self.dims();
        let k = self.covariate_names.len();
        IndividualRef {
            id: &self.ids[i],
            alpha: &self.alpha[i * d..(i + 1) * d],
            beta: &self.beta[i * d..(i + 1) * d],
            cost_scale: &self.cost_scale[i * d..(i + 1) * d],
            covariates: &self.covariates[i * k..(i + 1) * k],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = IndividualRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn to_individual(&self, i: usize) -> Individual {
        let r = self.get(i);
        Individual {
            id: r.id.to_string(),
            alpha: r.alpha.to_vec(),
            beta: r.beta.to_vec(),
            cost_scale: r.cost_scale.to_vec(),
            covariates: r.covariates.to_vec(),
        }
    }

    /// Rows `indices` in the given order (repeats allowed, as in resampling).
    pub fn subset(&self, indices: &[usize]) -> Population {
        let mut out = Population::with_covariates(self.space.clone(), self.covariate_names.clone());
        let d = self.dims();
        let k = self.covariate_names.len();
        out.ids.reserve(indices.len());
        for &i in indices {
            out.ids.push(self.ids[i].clone());
            out.alpha.extend_from_slice(&self.alpha[i * d..(i + 1) * d]);
            out.beta.extend_from_slice(&self.beta[i * d..(i + 1) * d]);
            out.cost_scale
                .extend_from_slice(&self.cost_scale[i * d..(i + 1) * d]);
            out.covariates
                .extend_from_slice(&self.covariates[i * k..(i + 1) * k]);
        }
        out
    }

    /// Copy with every intercept set to zero (pure-incremental semantics).
    pub fn with_zero_intercept(&self) -> Population {
        let mut out = self.clone();
        out.alpha.iter_mut().for_each(|a| *a = 0.0);
        out
    }
}

/// `L` offered treatments plus a pure assignment of every individual.
///
/// With `holdout` set, index `treatments.len()` denotes the no-treatment cell
/// and `masses` carries one extra trailing entry for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedPolicy {
    pub treatments: Vec<FeasibleTreatment>,
    pub assignment: Vec<usize>,
    pub masses: Vec<f64>,
    #[serde(default)]
    pub holdout: bool,
}

impl SegmentedPolicy {
    pub fn from_assignment(
        treatments: Vec<FeasibleTreatment>,
        assignment: Vec<usize>,
        holdout: bool,
    ) -> Self {
        let cells = treatments.len() + usize::from(holdout);
        let mut counts = vec![0usize; cells];
        for &a in &assignment {
            if a < cells {
                counts[a] += 1;
            }
        }
        let n = assignment.len().max(1) as f64;
        let masses = counts.iter().map(|&c| c as f64 / n).collect();
        Self {
            treatments,
            assignment,
            masses,
            holdout,
        }
    }

    pub fn num_treatments(&self) -> usize {
        self.treatments.len()
    }

    /// Offered treatment of individual `i`; `None` when held out.
    pub fn treatment_of(&self, i: usize) -> Option<FeasibleTreatment> {
        self.treatments.get(self.assignment[i]).copied()
    }

    /// Member counts per cell (including the holdout cell when enabled).
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.treatments.len() + usize::from(self.holdout)];
        for &a in &self.assignment {
            counts[a] += 1;
        }
        counts
    }

    /// Number of distinct `(dim, value)` pairs among the offered treatments.
    pub fn unique_treatments(&self) -> usize {
        let mut seen: Vec<FeasibleTreatment> = Vec::new();
        for t in &self.treatments {
            if !seen.iter().any(|s| s.same_as(t)) {
                seen.push(*t);
            }
        }
        seen.len()
    }

    pub fn validate(&self, pop: &Population) -> Result<()> {
        if self.assignment.len() != pop.len() {
            return Err(Error::Structural(format!(
                "assignment covers {} individuals, population has {}",
                self.assignment.len(),
                pop.len()
            )));
        }
        let cells = self.treatments.len() + usize::from(self.holdout);
        if let Some((i, a)) = self
            .assignment
            .iter()
            .enumerate()
            .find(|(_, &a)| a >= cells)
        {
            return Err(Error::Structural(format!(
                "individual {i} assigned to cell {a}, only {cells} cells exist"
            )));
        }
        for t in &self.treatments {
            pop.space().check(t.dim, t.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfit {
    /// `None` for the holdout cell.
    pub treatment: Option<FeasibleTreatment>,
    pub members: usize,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitReport {
    pub total_profit: f64,
    pub total_regret: f64,
    pub squared_regret: f64,
    pub per_segment: Vec<SegmentProfit>,
}

/// Profit, regret and squared regret of a policy against the granular
/// benchmark.
///
/// With a holdout cell the benchmark becomes `max(R̄_i, 0)`, since holding an
/// individual out is then one of the firm's options.
pub fn policy_profit(
    pop: &Population,
    granular: &GranularSolution,
    policy: &SegmentedPolicy,
) -> Result<ProfitReport> {
    policy.validate(pop)?;
    if granular.len() != pop.len() {
        return Err(Error::Structural(
            "granular solution does not match population".into(),
        ));
    }
    let cells = policy.treatments.len() + usize::from(policy.holdout);
    let mut per_segment: Vec<SegmentProfit> = (0..cells)
        .map(|l| SegmentProfit {
            treatment: policy.treatments.get(l).copied(),
            members: 0,
            profit: 0.0,
        })
        .collect();
    let (mut total_profit, mut total_regret, mut squared_regret) = (0.0, 0.0, 0.0);
    for (i, &cell) in policy.assignment.iter().enumerate() {
        let profit = match policy.treatments.get(cell) {
            Some(t) => pop.get(i).profit_at(*t),
            None => 0.0,
        };
        let benchmark = granular.benchmark(i, policy.holdout);
        let regret = (benchmark - profit).max(0.0);
        total_profit += profit;
        total_regret += regret;
        squared_regret += regret * regret;
        per_segment[cell].members += 1;
        per_segment[cell].profit += profit;
    }
    Ok(ProfitReport {
        total_profit,
        total_regret,
        squared_regret,
        per_segment,
    })
}
