//! Response-curve fitting from per-arm effect estimates.
//!
//! Each individual comes with estimated effects at a handful of discrete arm
//! levels per dimension. A least-squares line in `ln(1 + t)` turns those into
//! `(α, β)`; individuals with no responsive dimension are dropped before
//! solving.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Individual, Population, TreatmentSpace};
use crate::numeric::pearson;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedCurve {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `estimates` on `ln(1 + levels)` with intercept.
/// `R²` is 1 when the estimates are constant.
pub fn fit_response_curve(levels: &[f64], estimates: &[f64]) -> Result<FittedCurve> {
    if levels.len() != estimates.len() {
        return Err(Error::Structural(format!(
            "{} levels but {} estimates",
            levels.len(),
            estimates.len()
        )));
    }
    let n = levels.len() as f64;
    let x: Vec<f64> = levels.iter().map(|t| t.ln_1p()).collect();
    let x_bar = x.iter().sum::<f64>() / n;
    let y_bar = estimates.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - x_bar) * (v - x_bar)).sum();
    if levels.len() < 2 || sxx.is_nan() || sxx <= 0.0 {
        return Err(Error::RankDeficient(
            "arm levels must take at least two distinct values".into(),
        ));
    }
    let sxy: f64 = x
        .iter()
        .zip(estimates)
        .map(|(a, b)| (a - x_bar) * (b - y_bar))
        .sum();
    let beta = sxy / sxx;
    let alpha = y_bar - beta * x_bar;
    let ss_tot: f64 = estimates.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(estimates)
        .map(|(a, y)| {
            let e = y - (alpha + beta * a);
            e * e
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(FittedCurve {
        alpha,
        beta,
        r_squared,
    })
}

/// Effect estimates of one individual at every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRow {
    pub id: String,
    /// `estimates[d][k]` is the estimate at `levels[d][k]`.
    pub estimates: Vec<Vec<f64>>,
    pub cost_scale: Vec<f64>,
    /// Designated validation arm as `(dim, arm index)`.
    pub holdout: Option<(usize, usize)>,
    pub covariates: Vec<f64>,
}

/// Per-arm estimates for a population; arm levels are shared by everyone.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmEstimates {
    space: TreatmentSpace,
    levels: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
    rows: Vec<ArmRow>,
}

impl ArmEstimates {
    pub fn new(
        space: TreatmentSpace,
        levels: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
        rows: Vec<ArmRow>,
    ) -> Result<Self> {
        if levels.len() != space.dims() {
            return Err(Error::Structural(format!(
                "arm levels given for {} dimensions, space has {}",
                levels.len(),
                space.dims()
            )));
        }
        for (d, lv) in levels.iter().enumerate() {
            if let Some(t) = lv
                .iter()
                .find(|t| !(**t > 0.0 && **t <= space.upper_bound(d)))
            {
                return Err(Error::Domain(format!(
                    "arm level {t} outside (0, {}] in dimension {}",
                    space.upper_bound(d),
                    d + 1
                )));
            }
            let mut distinct = lv.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < 2 {
                return Err(Error::RankDeficient(format!(
                    "dimension {} needs at least two distinct arm levels",
                    d + 1
                )));
            }
        }
        for r in &rows {
            let shape_ok = r.estimates.len() == levels.len()
                && r.estimates
                    .iter()
                    .zip(&levels)
                    .all(|(e, l)| e.len() == l.len())
                && r.cost_scale.len() == levels.len()
                && r.covariates.len() == covariate_names.len();
            if !shape_ok {
                return Err(Error::Structural(format!(
                    "row {} does not match the arm layout",
                    r.id
                )));
            }
            if let Some((d, k)) = r.holdout {
                if d >= levels.len() || k >= levels[d].len() {
                    return Err(Error::Structural(format!(
                        "row {} designates a missing holdout arm",
                        r.id
                    )));
                }
            }
        }
        Ok(Self {
            space,
            levels,
            covariate_names,
            rows,
        })
    }

    pub fn space(&self) -> &TreatmentSpace {
        &self.space
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn rows(&self) -> &[ArmRow] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedIndividual {
    pub id: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub cost_scale: Vec<f64>,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub individuals: Vec<FittedIndividual>,
    /// Unweighted mean `R²` per dimension.
    pub mean_r_squared: Vec<f64>,
}

/// Fits every individual and dimension independently; output keeps row order.
pub fn fit_population(arms: &ArmEstimates) -> Result<FitSummary> {
    let individuals: Vec<FittedIndividual> = arms
        .rows
        .par_iter()
        .map(|r| {
            let curves = arms
                .levels
                .iter()
                .zip(&r.estimates)
                .map(|(lv, est)| fit_response_curve(lv, est))
                .collect::<Result<Vec<_>>>()?;
            Ok(FittedIndividual {
                id: r.id.clone(),
                alpha: curves.iter().map(|c| c.alpha).collect(),
                beta: curves.iter().map(|c| c.beta).collect(),
                r_squared: curves.iter().map(|c| c.r_squared).collect(),
                cost_scale: r.cost_scale.clone(),
                covariates: r.covariates.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let n = individuals.len().max(1) as f64;
    let mean_r_squared = (0..arms.levels.len())
        .map(|d| individuals.iter().map(|f| f.r_squared[d]).sum::<f64>() / n)
        .collect();
    Ok(FitSummary {
        individuals,
        mean_r_squared,
    })
}

pub const DEFAULT_BETA_FLOOR: f64 = 1e-6;

/// Drops individuals whose sensitivity is at most `beta_floor` in every
/// dimension; survivors have such dimensions clamped to `β = 0`.
pub fn filter_population(
    fitted: &[FittedIndividual],
    space: &TreatmentSpace,
    covariate_names: &[String],
    beta_floor: f64,
) -> Result<(Population, Vec<String>)> {
    let mut pop = Population::with_covariates(space.clone(), covariate_names.to_vec());
    let mut dropped = Vec::new();
    for f in fitted {
        if f.beta.iter().all(|b| *b <= beta_floor) {
            dropped.push(f.id.clone());
            continue;
        }
        let beta = f
            .beta
            .iter()
            .map(|b| if *b <= beta_floor { 0.0 } else { *b })
            .collect();
        pop.push(
            Individual::new(f.id.clone(), f.alpha.clone(), beta, f.cost_scale.clone())
                .with_covariates(f.covariates.clone()),
        )?;
    }
    Ok((pop, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPair {
    pub id: String,
    pub level: f64,
    pub predicted: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub dim: usize,
    pub pairs: Vec<HoldoutPair>,
    /// Pearson correlation of predictions and held-out estimates; `None`
    /// when either side has no variance.
    pub correlation: Option<f64>,
}

/// Refits each individual without their designated arm in `dim` and predicts
/// that arm. Individuals whose designated arm lies elsewhere are skipped.
pub fn honest_validate(arms: &ArmEstimates, dim: usize) -> Result<Validation> {
    let levels = arms.levels.get(dim).ok_or_else(|| {
        Error::Config(format!(
            "dimension {} outside 1..={}",
            dim + 1,
            arms.levels.len()
        ))
    })?;
    if levels.len() < 3 {
        return Err(Error::ValidationInfeasible(format!(
            "dimension {} has {} arms; honest validation needs at least 3",
            dim + 1,
            levels.len()
        )));
    }
    let pairs: Vec<HoldoutPair> = arms
        .rows
        .par_iter()
        .filter_map(|r| match r.holdout {
            Some((d, k)) if d == dim => Some((r, k)),
            _ => None,
        })
        .map(|(r, k)| {
            let keep: Vec<usize> = (0..levels.len()).filter(|&j| j != k).collect();
            let lv: Vec<f64> = keep.iter().map(|&j| levels[j]).collect();
            let est: Vec<f64> = keep.iter().map(|&j| r.estimates[dim][j]).collect();
            let fit = fit_response_curve(&lv, &est)?;
            Ok(HoldoutPair {
                id: r.id.clone(),
                level: levels[k],
                predicted: fit.alpha + fit.beta * levels[k].ln_1p(),
                truth: r.estimates[dim][k],
            })
        })
        .collect::<Result<_>>()?;
    let p: Vec<f64> = pairs.iter().map(|h| h.predicted).collect();
    let t: Vec<f64> = pairs.iter().map(|h| h.truth).collect();
    Ok(Validation {
        dim,
        correlation: pearson(&p, &t),
        pairs,
    })
}
