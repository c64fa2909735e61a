//! Discretize-then-personalize baselines: k-means segmentation followed by a
//! per-segment treatment choice, A/B-test arm subsets, and blanket offers.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{sweep, CellTable, UpdateRule, CHUNK};
use crate::granular::Problem;
use crate::model::{FeasibleTreatment, ProfitReport, SegmentedPolicy, TreatmentSpace};
use crate::subsets::{best_subset, binomial};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOptions {
    pub starts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            starts: 3,
            max_iterations: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    /// `k × dims`, row-major.
    pub centers: Vec<f64>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    pub iterations: usize,
}

/// Number of distinct rows, counting no further than `cap`.
pub fn count_distinct(points: &[f64], dims: usize, cap: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in points.chunks_exact(dims) {
        seen.insert(row.iter().map(|v| v.to_bits()).collect());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean k-means on row-major `points`: k-means++ seeding, Lloyd
/// iterations until no point changes cluster, best of `starts` by WCSS.
pub fn kmeans(points: &[f64], dims: usize, k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    if dims == 0 || !points.len().is_multiple_of(dims) {
        return Err(Error::Structural(format!(
            "{} values do not form rows of {dims}",
            points.len()
        )));
    }
    let n = points.len() / dims;
    if k == 0 {
        return Err(Error::Config("k-means needs at least one cluster".into()));
    }
    let distinct = count_distinct(points, dims, k);
    if distinct < k {
        return Err(Error::Config(format!(
            "{k} clusters requested for {distinct} distinct points"
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for start in 0..opts.starts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::numeric::mix_seed(opts.seed, k as u64, start as u64));
        let run = lloyd_run(points, dims, n, k, opts.max_iterations, &mut rng);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn plus_plus(points: &[f64], dims: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * dims);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(&points[first * dims..(first + 1) * dims]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dims)
        .map(|p| sq_dist(p, &centers[..dims]))
        .collect();
    while centers.len() < k * dims {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > u && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick * dims..(pick + 1) * dims].to_vec();
        for (w, p) in d2.iter_mut().zip(points.chunks_exact(dims)) {
            *w = w.min(sq_dist(p, &c));
        }
        centers.extend_from_slice(&c);
    }
    centers
}

struct Partial {
    sums: Vec<f64>,
    counts: Vec<usize>,
    wcss: f64,
    changed: usize,
}

fn lloyd_run(
    points: &[f64],
    dims: usize,
    n: usize,
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> KMeansResult {
    let mut centers = plus_plus(points, dims, n, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let partials: Vec<Partial> = assignment
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, out)| {
                let mut part = Partial {
                    sums: vec![0.0; k * dims],
                    counts: vec![0; k],
                    wcss: 0.0,
                    changed: 0,
                };
                for (j, slot) in out.iter_mut().enumerate() {
                    let i = c * CHUNK + j;
                    let p = &points[i * dims..(i + 1) * dims];
                    let (mut best, mut arg) = (f64::INFINITY, 0);
                    for (m, center) in centers.chunks_exact(dims).enumerate() {
                        let d = sq_dist(p, center);
                        if d < best {
                            best = d;
                            arg = m;
                        }
                    }
                    if *slot != arg {
                        part.changed += 1;
                        *slot = arg;
                    }
                    part.counts[arg] += 1;
                    part.wcss += best;
                    for (s, v) in part.sums[arg * dims..(arg + 1) * dims].iter_mut().zip(p) {
                        *s += v;
                    }
                }
                part
            })
            .collect();
        let mut total = Partial {
            sums: vec![0.0; k * dims],
            counts: vec![0; k],
            wcss: 0.0,
            changed: 0,
        };
        for p in &partials {
            total
                .sums
                .iter_mut()
                .zip(&p.sums)
                .for_each(|(a, b)| *a += b);
            total
                .counts
                .iter_mut()
                .zip(&p.counts)
                .for_each(|(a, b)| *a += b);
            total.wcss += p.wcss;
            total.changed += p.changed;
        }
        iterations += 1;
        let has_empty = total.counts.contains(&0);
        if (total.changed == 0 && !has_empty) || iterations >= max_iter {
            return KMeansResult {
                assignment,
                centers,
                wcss: total.wcss,
                iterations,
            };
        }
        for m in 0..k {
            if total.counts[m] > 0 {
                let cnt = total.counts[m] as f64;
                for (c, s) in centers[m * dims..(m + 1) * dims]
                    .iter_mut()
                    .zip(&total.sums[m * dims..(m + 1) * dims])
                {
                    *c = s / cnt;
                }
            }
        }
        if has_empty {
            // Farthest points from their current centers, one per empty cluster.
            let mut dist: Vec<(f64, usize)> = assignment
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    (
                        sq_dist(
                            &points[i * dims..(i + 1) * dims],
                            &centers[a * dims..(a + 1) * dims],
                        ),
                        i,
                    )
                })
                .collect();
            dist.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut far = dist.into_iter();
            for m in (0..k).filter(|&m| total.counts[m] == 0) {
                if let Some((_, i)) = far.next() {
                    centers[m * dims..(m + 1) * dims]
                        .copy_from_slice(&points[i * dims..(i + 1) * dims]);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// z-scored covariate columns.
    Covariates,
    /// Raw sensitivities `β_{i,d}`.
    Preferences,
    /// Raw optimal levels `t*_{i,d}`.
    OptimalLevels,
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariates" => Ok(Feature::Covariates),
            "preferences" => Ok(Feature::Preferences),
            "optimal-levels" | "optimal_levels" => Ok(Feature::OptimalLevels),
            other => Err(Error::Config(format!(
                "unknown segmentation feature '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkPolicy {
    pub policy: SegmentedPolicy,
    pub report: ProfitReport,
}

fn feature_matrix(problem: &Problem<'_>, feature: Feature) -> Result<(Vec<f64>, usize)> {
    let pop = problem.pop();
    match feature {
        Feature::Preferences => Ok((pop.beta().to_vec(), pop.dims())),
        Feature::OptimalLevels => Ok((problem.granular().t_star_matrix().to_vec(), pop.dims())),
        Feature::Covariates => {
            let k = pop.covariate_names().len();
            if k == 0 {
                return Err(Error::Config(
                    "population has no covariates to segment on".into(),
                ));
            }
            let n = pop.len() as f64;
            let mut x = pop.covariates().to_vec();
            for j in 0..k {
                let mean = x.iter().skip(j).step_by(k).sum::<f64>() / n;
                let var = x
                    .iter()
                    .skip(j)
                    .step_by(k)
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                for v in x.iter_mut().skip(j).step_by(k) {
                    *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
                }
            }
            Ok((x, k))
        }
    }
}

/// Clusters on `feature`, then gives every cluster its profit-maximising
/// treatment. Members stay in their cluster even if another segment's
/// treatment would suit them better. `k` is reduced to the number of
/// distinct feature vectors when that is smaller.
pub fn segment_then_personalize(
    problem: &Problem<'_>,
    k: usize,
    feature: Feature,
    opts: &KMeansOptions,
) -> Result<BenchmarkPolicy> {
    if problem.is_empty() {
        return Err(Error::Config("population is empty".into()));
    }
    let (x, dims) = feature_matrix(problem, feature)?;
    let k_eff = k.min(count_distinct(&x, dims, k));
    let clusters = kmeans(&x, dims, k_eff, opts)?;
    let table = CellTable::from_assignment(problem, &clusters.assignment, k_eff);
    let treatments = (0..k_eff)
        .map(|c| {
            table
                .cell(c)
                .reduce(None, UpdateRule::Exact, problem.upper_bounds(), 0.0)
        })
        .collect();
    let policy = SegmentedPolicy::from_assignment(treatments, clusters.assignment, false);
    let report = problem.report(&policy)?;
    Ok(BenchmarkPolicy { policy, report })
}

/// Dollar-off 2, 3, 4, 5 and percent-off 5, 10, 15, 20.
pub fn standard_arms(space: &TreatmentSpace) -> Result<Vec<FeasibleTreatment>> {
    [
        (0, 2.0),
        (0, 3.0),
        (0, 4.0),
        (0, 5.0),
        (1, 5.0),
        (1, 10.0),
        (1, 15.0),
        (1, 20.0),
    ]
    .iter()
    .map(|&(d, v)| FeasibleTreatment::new(space, d, v))
    .collect()
}

/// Default limit on the number of subsets enumerated.
pub const SUBSET_CAP: u128 = 10_000_000;

/// Best `L`-subset of discrete arms, every individual taking their most
/// profitable arm within the subset.
pub fn ab_test_policy(
    problem: &Problem<'_>,
    arms: &[FeasibleTreatment],
    l: usize,
) -> Result<BenchmarkPolicy> {
    if l == 0 || l > arms.len() {
        return Err(Error::Config(format!(
            "{l} arms requested from {}",
            arms.len()
        )));
    }
    if problem.is_empty() {
        return Err(Error::Config("population is empty".into()));
    }
    for t in arms {
        problem.pop().space().check(t.dim, t.value)?;
    }
    let count = binomial(arms.len() as u128, l as u128);
    if count > SUBSET_CAP {
        return Err(Error::EnumerationCap {
            count,
            cap: SUBSET_CAP,
        });
    }
    let columns = profit_columns(problem, arms);
    let (chosen, _) = best_subset(&columns, l);
    let treatments: Vec<FeasibleTreatment> = chosen.iter().map(|&j| arms[j]).collect();
    assigned(problem, treatments)
}

pub(crate) fn profit_columns(
    problem: &Problem<'_>,
    candidates: &[FeasibleTreatment],
) -> Vec<Vec<f64>> {
    candidates
        .par_iter()
        .map(|t| problem.pop().iter().map(|ind| ind.profit_at(*t)).collect())
        .collect()
}

pub(crate) fn assigned(
    problem: &Problem<'_>,
    treatments: Vec<FeasibleTreatment>,
) -> Result<BenchmarkPolicy> {
    let mut assignment = vec![0; problem.len()];
    sweep(problem, &treatments, false, false, &mut assignment);
    let policy = SegmentedPolicy::from_assignment(treatments, assignment, false);
    let report = problem.report(&policy)?;
    Ok(BenchmarkPolicy { policy, report })
}

#[derive(Debug, Clone)]
pub struct Blanket {
    pub treatment: FeasibleTreatment,
    pub report: ProfitReport,
}

/// One treatment for everyone: `fixed` when given, otherwise the
/// population-profit maximiser.
pub fn blanket(problem: &Problem<'_>, fixed: Option<FeasibleTreatment>) -> Result<Blanket> {
    if problem.is_empty() {
        return Err(Error::Config("population is empty".into()));
    }
    let treatment = match fixed {
        Some(t) => FeasibleTreatment::new(problem.pop().space(), t.dim, t.value)?,
        None => {
            let all: Vec<usize> = (0..problem.len()).collect();
            CellTable::from_members(problem, &all).cell(0).reduce(
                None,
                UpdateRule::Exact,
                problem.upper_bounds(),
                0.0,
            )
        }
    };
    let policy = SegmentedPolicy::from_assignment(vec![treatment], vec![0; problem.len()], false);
    let report = problem.report(&policy)?;
    Ok(Blanket { treatment, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Individual, Population};

    fn pop1(betas: &[f64]) -> Population {
        let space = TreatmentSpace::with_bounds(&[5.0]).unwrap();
        Population::from_individuals(
            space,
            betas
                .iter()
                .enumerate()
                .map(|(i, b)| Individual::new(i.to_string(), vec![0.0], vec![*b], vec![1.0])),
        )
        .unwrap()
    }

    #[test]
    fn kmeans_separates_outlier() {
        let r = kmeans(&[0.0, 0.0, 10.0], 1, 2, &KMeansOptions::default()).unwrap();
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_ne!(r.assignment[0], r.assignment[2]);
        assert_eq!(r.wcss, 0.0);
    }

    #[test]
    fn kmeans_with_k_equal_n_has_zero_wcss() {
        let pts = [1.0, 2.0, 3.5, 7.0, 11.0];
        assert_eq!(
            kmeans(&pts, 1, 5, &KMeansOptions::default()).unwrap().wcss,
            0.0
        );
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        assert!(matches!(
            kmeans(&[1.0, 1.0, 2.0], 1, 3, &KMeansOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn preference_clusters_get_their_optima() {
        let pop = pop1(&[2.0, 2.0, 2.0, 4.0, 4.0, 4.0]);
        let p = Problem::new(&pop);
        let b = segment_then_personalize(&p, 2, Feature::Preferences, &KMeansOptions::default())
            .unwrap();
        let mut v: Vec<f64> = b.policy.treatments.iter().map(|t| t.value).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![1.0, 3.0]);
        assert_eq!(b.report.total_regret, 0.0);
    }

    #[test]
    fn identical_population_matches_blanket() {
        let pop = pop1(&[3.0; 5]);
        let p = Problem::new(&pop);
        let b = segment_then_personalize(&p, 3, Feature::OptimalLevels, &KMeansOptions::default())
            .unwrap();
        let bl = blanket(&p, None).unwrap();
        assert_eq!(b.report.total_profit, bl.report.total_profit);
    }

    #[test]
    fn blanket_homogeneous_closed_form() {
        let pop = pop1(&[2.0, 3.0, 4.0, 5.0]);
        let p = Problem::new(&pop);
        assert_eq!(blanket(&p, None).unwrap().treatment.value, 2.5);
    }

    #[test]
    fn standard_arms_and_subset_count() {
        let arms = standard_arms(&TreatmentSpace::promotions()).unwrap();
        assert_eq!(arms.len(), 8);
        assert_eq!(binomial(8, 3), 56);
    }

    #[test]
    fn single_arm_is_blanket() {
        let pop = pop1(&[2.0, 6.0]);
        let p = Problem::new(&pop);
        let arm = FeasibleTreatment { dim: 0, value: 2.0 };
        let ab = ab_test_policy(&p, &[arm], 1).unwrap();
        assert_eq!(
            ab.report.total_profit,
            blanket(&p, Some(arm)).unwrap().report.total_profit
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn ab_test_profit_grows_with_arms(pop in crate::testing::population(1..40)) {
                let p = Problem::new(&pop);
                let arms = standard_arms(pop.space()).unwrap();
                let profits: Vec<f64> = (1..=arms.len()).map(|l| ab_test_policy(&p, &arms, l).unwrap().report.total_profit).collect();
                for w in profits.windows(2) {
                    prop_assert!(w[1] >= w[0]);
                }
            }

            #[test]
            fn one_cluster_is_the_blanket(pop in crate::testing::population(1..40), seed in 0..100u64) {
                let p = Problem::new(&pop);
                let opts = KMeansOptions { seed, ..KMeansOptions::default() };
                let one = segment_then_personalize(&p, 1, Feature::Preferences, &opts).unwrap();
                let b = blanket(&p, None).unwrap();
                prop_assert!((one.report.total_profit - b.report.total_profit).abs() <= 1e-9 * b.report.total_profit.abs().max(1.0));
            }
        }
    }
}
