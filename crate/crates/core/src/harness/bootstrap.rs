//! Second-step bootstrap: resample individuals, keep their fitted curves,
//! and rerun only the segmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{
    ab_test_policy, blanket, segment_then_personalize, Feature, KMeansOptions,
};
use crate::granular::Problem;
use crate::lloyd::{Solver, SolverConfig};
use crate::model::{FeasibleTreatment, Population};
use crate::numeric::{mean_sd, mix_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resample {
    WithReplacement,
    /// Every replicate is the original population; for tests.
    Identity,
}

#[derive(Debug, Clone)]
pub enum BootstrapMethod {
    Coarse(SolverConfig),
    KMeans {
        feature: Feature,
        k: usize,
        options: KMeansOptions,
    },
    AbTest {
        arms: Vec<FeasibleTreatment>,
        l: usize,
    },
    Blanket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Total profit per replicate, in replicate order.
    pub replicates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`); 0 for a single replicate.
    pub sd: f64,
}

/// Row indices of replicate `r`.
pub fn resample_indices(n: usize, seed: u64, r: usize, mode: Resample) -> Vec<usize> {
    match mode {
        Resample::Identity => (0..n).collect(),
        Resample::WithReplacement => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64, 0xb0075));
            (0..n).map(|_| rng.random_range(0..n)).collect()
        }
    }
}

pub fn method_profit(problem: &Problem<'_>, method: &BootstrapMethod) -> Result<f64> {
    Ok(match method {
        BootstrapMethod::Coarse(cfg) => {
            Solver::new(problem, cfg.clone())?
                .solve()?
                .report
                .total_profit
        }
        BootstrapMethod::KMeans {
            feature,
            k,
            options,
        } => {
            segment_then_personalize(problem, *k, *feature, options)?
                .report
                .total_profit
        }
        BootstrapMethod::AbTest { arms, l } => {
            ab_test_policy(problem, arms, *l)?.report.total_profit
        }
        BootstrapMethod::Blanket => blanket(problem, None)?.report.total_profit,
    })
}

/// Runs `b` replicates in parallel; results are collected in replicate order.
pub fn bootstrap_second_step(
    pop: &Population,
    b: usize,
    method: &BootstrapMethod,
    seed: u64,
    mode: Resample,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one replicate".into(),
        ));
    }
    let zero_intercept = matches!(method, BootstrapMethod::Coarse(c) if c.zero_intercept);
    let replicates: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|r| {
            let sample = pop.subset(&resample_indices(pop.len(), seed, r, mode));
            let problem = if zero_intercept {
                Problem::zero_intercept(&sample)
            } else {
                Problem::owned(sample)
            };
            method_profit(&problem, method)
        })
        .collect::<Result<_>>()?;
    let (mean, sd) = mean_sd(&replicates);
    Ok(BootstrapResult {
        replicates,
        mean,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Individual, TreatmentSpace};

    #[test]
    fn identical_individuals_have_zero_sd() {
        let space = TreatmentSpace::promotions();
        let pop = Population::from_individuals(
            space,
            (0..20).map(|i| {
                Individual::new(
                    i.to_string(),
                    vec![0.1, 0.1],
                    vec![3.0, 1.0],
                    vec![1.0, 0.2],
                )
            }),
        )
        .unwrap();
        let r = bootstrap_second_step(
            &pop,
            8,
            &BootstrapMethod::Blanket,
            1,
            Resample::WithReplacement,
        )
        .unwrap();
        assert_eq!(r.sd, 0.0);
    }

    #[test]
    fn single_identity_replicate_is_point_estimate() {
        let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
        let pop = Population::from_individuals(
            space,
            [2.0, 3.0, 5.0]
                .iter()
                .map(|b| Individual::new("x", vec![0.0], vec![*b], vec![1.0])),
        )
        .unwrap();
        let cfg = SolverConfig::default().with_treatments(2);
        let r = bootstrap_second_step(
            &pop,
            1,
            &BootstrapMethod::Coarse(cfg.clone()),
            0,
            Resample::Identity,
        )
        .unwrap();
        let point = crate::lloyd::solve(&pop, &cfg).unwrap().report.total_profit;
        assert_eq!(r.replicates, vec![point]);
        assert_eq!(r.sd, 0.0);
    }
}
