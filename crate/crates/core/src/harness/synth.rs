//! Seeded synthetic populations and per-arm estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::calibrate::{ArmEstimates, ArmRow};
use crate::model::{Individual, Population, TreatmentSpace};
use crate::{Error, Result};

/// `exp(N(location, scale²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    pub location: f64,
    pub scale: f64,
}

impl LogNormalSpec {
    fn dist(&self) -> Result<LogNormal<f64>> {
        if !(self.location.is_finite() && self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::Config(format!(
                "log-normal location {} / scale {} invalid",
                self.location, self.scale
            )));
        }
        LogNormal::new(self.location, self.scale).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostSpec {
    Constant {
        value: f64,
    },
    /// Typical past spend drawn log-normal; the cost scale is spend / 100.
    Spend {
        location: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateSpec {
    None,
    /// `x_k = ln β_{k mod D} + noise·z`.
    Linked {
        count: usize,
        noise: f64,
    },
    /// Standard normal noise.
    Unlinked {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub upper_bounds: Vec<f64>,
    pub beta: Vec<LogNormalSpec>,
    pub cost: Vec<CostSpec>,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub covariates: CovariateSpec,
    pub seed: u64,
}

impl SynthConfig {
    /// Dollar-off up to 5 and percent-off up to 20, with median optima near
    /// 1.5 dollars and 3.5 points.
    pub fn promotions(n: usize, seed: u64) -> Self {
        Self {
            n,
            upper_bounds: vec![5.0, 20.0],
            beta: vec![
                LogNormalSpec {
                    location: 2.5f64.ln(),
                    scale: 0.5,
                },
                LogNormalSpec {
                    location: 0.9f64.ln(),
                    scale: 0.6,
                },
            ],
            cost: vec![
                CostSpec::Constant { value: 1.0 },
                CostSpec::Spend {
                    location: 20f64.ln(),
                    scale: 0.5,
                },
            ],
            alpha_mean: 0.0,
            alpha_sd: 0.5,
            covariates: CovariateSpec::Linked {
                count: 3,
                noise: 1.0,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.upper_bounds.len();
        if self.beta.len() != d || self.cost.len() != d {
            return Err(Error::Config(format!(
                "{d} bounds, {} sensitivity and {} cost distributions",
                self.beta.len(),
                self.cost.len()
            )));
        }
        TreatmentSpace::with_bounds(&self.upper_bounds)?;
        for b in &self.beta {
            b.dist()?;
        }
        for c in &self.cost {
            match *c {
                CostSpec::Constant { value } if !(value.is_finite() && value > 0.0) => {
                    return Err(Error::Config(format!(
                        "constant cost scale {value} must be positive"
                    )));
                }
                CostSpec::Spend { location, scale } => {
                    LogNormalSpec { location, scale }.dist()?;
                }
                _ => {}
            }
        }
        if !(self.alpha_mean.is_finite() && self.alpha_sd.is_finite() && self.alpha_sd >= 0.0) {
            return Err(Error::Config("intercept distribution invalid".into()));
        }
        if let CovariateSpec::Linked { noise, .. } = self.covariates {
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::Config(format!("covariate noise {noise} invalid")));
            }
        }
        Ok(())
    }
}

/// Draws individuals one at a time from a single ChaCha stream; identical
/// configs give identical populations.
pub fn generate_population(config: &SynthConfig) -> Result<Population> {
    config.validate()?;
    let space = TreatmentSpace::with_bounds(&config.upper_bounds)?;
    let d = space.dims();
    let betas: Vec<LogNormal<f64>> = config
        .beta
        .iter()
        .map(|b| b.dist())
        .collect::<Result<_>>()?;
    let costs: Vec<Option<LogNormal<f64>>> = config
        .cost
        .iter()
        .map(|c| match *c {
            CostSpec::Constant { .. } => Ok(None),
            CostSpec::Spend { location, scale } => {
                LogNormalSpec { location, scale }.dist().map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let alpha = Normal::new(config.alpha_mean, config.alpha_sd)
        .map_err(|e| Error::Config(e.to_string()))?;
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let names: Vec<String> = match config.covariates {
        CovariateSpec::None => vec![],
        CovariateSpec::Linked { count, .. } | CovariateSpec::Unlinked { count } => {
            (1..=count).map(|k| format!("x_{k}")).collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop = Population::with_covariates(space, names.clone());
    for i in 0..config.n {
        let beta: Vec<f64> = betas.iter().map(|b| b.sample(&mut rng)).collect();
        let cost_scale: Vec<f64> = config
            .cost
            .iter()
            .zip(&costs)
            .map(|(spec, dist)| match (spec, dist) {
                (CostSpec::Constant { value }, _) => *value,
                (_, Some(dist)) => dist.sample(&mut rng) / 100.0,
                _ => unreachable!("spend costs carry a distribution"),
            })
            .collect();
        let a: Vec<f64> = (0..d).map(|_| alpha.sample(&mut rng)).collect();
        let x: Vec<f64> = match config.covariates {
            CovariateSpec::None => vec![],
            CovariateSpec::Linked { count, noise } => (0..count)
                .map(|k| beta[k % d].ln() + noise * z.sample(&mut rng))
                .collect(),
            CovariateSpec::Unlinked { count } => (0..count).map(|_| z.sample(&mut rng)).collect(),
        };
        pop.push(Individual::new(format!("c{i}"), a, beta, cost_scale).with_covariates(x))?;
    }
    Ok(pop)
}

/// Noisy per-arm estimates `α + β·ln(1 + t) + noise·z` for an existing
/// population, each individual with one uniformly drawn validation arm.
pub fn synthesize_arms(
    pop: &Population,
    levels: Vec<Vec<f64>>,
    noise_sd: f64,
    seed: u64,
) -> Result<ArmEstimates> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Config(format!("noise {noise_sd} invalid")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = levels.iter().map(Vec::len).sum();
    let rows = pop
        .iter()
        .map(|ind| {
            let estimates = levels
                .iter()
                .enumerate()
                .map(|(d, lv)| {
                    lv.iter()
                        .map(|t| ind.cate(d, *t) + noise_sd * z.sample(&mut rng))
                        .collect()
                })
                .collect();
            let mut pick = rng.random_range(0..total.max(1));
            let mut holdout = None;
            for (d, lv) in levels.iter().enumerate() {
                if pick < lv.len() {
                    holdout = Some((d, pick));
                    break;
                }
                pick -= lv.len();
            }
            ArmRow {
                id: ind.id.to_string(),
                estimates,
                cost_scale: ind.cost_scale.to_vec(),
                holdout,
                covariates: ind.covariates.to_vec(),
            }
        })
        .collect();
    ArmEstimates::new(
        pop.space().clone(),
        levels,
        pop.covariate_names().to_vec(),
        rows,
    )
}
