//! Initial treatment sets for the multistart.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cells::profit_in_cell;
use crate::granular::Problem;
use crate::model::{FeasibleTreatment, SegmentedPolicy};
use crate::numeric::{grid_max, round_to_step};

/// The individual's own optimum, moved to the best grid point when `step > 0`.
pub(crate) fn target(problem: &Problem<'_>, i: usize, step: f64) -> FeasibleTreatment {
    let g = problem.granular();
    if step <= 0.0 {
        return g.best_treatment(i);
    }
    let ind = problem.pop().get(i);
    let mut best = (f64::NEG_INFINITY, FeasibleTreatment { dim: 0, value: 0.0 });
    for (d, &upper) in problem.upper_bounds().iter().enumerate() {
        let top = grid_max(upper, step);
        let lo = ((g.t_star(i, d) / step).floor() * step).min(top);
        let hi = (lo + step).min(top);
        let level = if ind.profit_diff(d, hi, lo) > 0.0 {
            hi
        } else {
            lo
        };
        let p = ind.profit(d, level);
        if p > best.0 {
            best = (
                p,
                FeasibleTreatment {
                    dim: d,
                    value: level,
                },
            );
        }
    }
    best.1
}

/// Per-individual best profit among `treatments` (the no-treatment option
/// counts when `holdout` is set).
fn best_profits(
    problem: &Problem<'_>,
    treatments: &[FeasibleTreatment],
    holdout: bool,
) -> Vec<f64> {
    let floor = if holdout { 0.0 } else { f64::NEG_INFINITY };
    (0..problem.len())
        .into_par_iter()
        .map(|i| {
            let ind = problem.pop().get(i);
            treatments
                .iter()
                .fold(floor, |acc, t| acc.max(ind.profit_at(*t)))
        })
        .collect()
}

fn raise(problem: &Problem<'_>, best: &mut [f64], t: FeasibleTreatment) {
    best.par_iter_mut().enumerate().for_each(|(i, b)| {
        *b = b.max(problem.pop().get(i).profit_at(t));
    });
}

/// Regret against the current offer; individuals with no offer yet score
/// their best return so the first pick is the most valuable individual.
#[inline]
fn score(problem: &Problem<'_>, best: &[f64], i: usize, holdout: bool) -> f64 {
    let bench = problem.granular().benchmark(i, holdout);
    if best[i] == f64::NEG_INFINITY {
        bench
    } else {
        (bench - best[i]).max(0.0)
    }
}

/// k-means++-style spread: each new treatment is the optimum of an
/// individual drawn with probability proportional to their squared regret
/// against the treatments chosen so far.
pub(crate) fn spread(
    problem: &Problem<'_>,
    l: usize,
    holdout: bool,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<FeasibleTreatment> {
    let n = problem.len();
    let mut best = vec![if holdout { 0.0 } else { f64::NEG_INFINITY }; n];
    let mut out = Vec::with_capacity(l);
    while out.len() < l {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if best[i] == f64::NEG_INFINITY {
                    1.0
                } else {
                    let r = (problem.granular().benchmark(i, holdout) - best[i]).max(0.0);
                    r * r
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            break;
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > u {
                break;
            }
        }
        let Some(i) = pick else { break };
        let t = target(problem, i, step);
        raise(problem, &mut best, t);
        out.push(t);
    }
    pad_from(problem, out, best, l, holdout, step)
}

/// Extends `existing` to `l` treatments by repeatedly adding the optimum of
/// the highest-regret individual.
pub(crate) fn pad_greedy(
    problem: &Problem<'_>,
    mut existing: Vec<FeasibleTreatment>,
    l: usize,
    holdout: bool,
    step: f64,
) -> Vec<FeasibleTreatment> {
    existing.truncate(l);
    if existing.len() == l {
        return existing;
    }
    let best = best_profits(problem, &existing, holdout);
    pad_from(problem, existing, best, l, holdout, step)
}

fn pad_from(
    problem: &Problem<'_>,
    mut out: Vec<FeasibleTreatment>,
    mut best: Vec<f64>,
    l: usize,
    holdout: bool,
    step: f64,
) -> Vec<FeasibleTreatment> {
    while out.len() < l {
        let mut pick: Option<(f64, usize)> = None;
        for i in 0..problem.len() {
            let r = score(problem, &best, i, holdout);
            if r > 0.0 && pick.is_none_or(|(b, _)| r > b) {
                pick = Some((r, i));
            }
        }
        let t = match pick {
            Some((_, i)) => target(problem, i, step),
            // Nothing left to gain: duplicates are perturbed in `prepare`.
            None => out
                .last()
                .copied()
                .unwrap_or_else(|| target(problem, 0, step)),
        };
        raise(problem, &mut best, t);
        out.push(t);
    }
    out
}

/// The previous solution plus the optimum of the highest-regret member of
/// its largest cell.
pub(crate) fn split_largest(
    problem: &Problem<'_>,
    prev: &SegmentedPolicy,
    step: f64,
) -> Vec<FeasibleTreatment> {
    let holdout = prev.holdout;
    let counts = prev.counts();
    let mut largest = 0;
    for (l, &c) in counts.iter().enumerate().take(prev.treatments.len()) {
        if c > counts[largest] {
            largest = l;
        }
    }
    let mut pick: Option<(f64, usize)> = None;
    for (i, &cell) in prev.assignment.iter().enumerate() {
        if cell != largest {
            continue;
        }
        let r = problem.granular().benchmark(i, holdout)
            - profit_in_cell(problem, &prev.treatments, i, cell);
        if r > 0.0 && pick.is_none_or(|(b, _)| r > b) {
            pick = Some((r, i));
        }
    }
    let l = prev.treatments.len() + 1;
    match pick {
        Some((_, i)) => {
            let mut out = prev.treatments.clone();
            out.push(target(problem, i, step));
            out
        }
        None => pad_greedy(problem, prev.treatments.clone(), l, holdout, step),
    }
}

/// Uniform dimensions and levels.
pub(crate) fn random(
    problem: &Problem<'_>,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<FeasibleTreatment> {
    let bounds = problem.upper_bounds();
    (0..l)
        .map(|_| {
            let dim = rng.random_range(0..bounds.len());
            FeasibleTreatment {
                dim,
                value: rng.random::<f64>() * bounds[dim],
            }
        })
        .collect()
}

/// Clamps to bounds, snaps to the grid when `step > 0`, and perturbs
/// duplicates by `±m·δ` (alternating signs, increasing `m`) until unique.
pub(crate) fn prepare(
    problem: &Problem<'_>,
    seeds: Vec<FeasibleTreatment>,
    step: f64,
) -> Vec<FeasibleTreatment> {
    let bounds = problem.upper_bounds();
    let snapped: Vec<FeasibleTreatment> = seeds
        .into_iter()
        .map(|t| {
            let upper = bounds[t.dim];
            let value = if step > 0.0 {
                round_to_step(t.value, step).clamp(0.0, grid_max(upper, step))
            } else {
                t.value.clamp(0.0, upper)
            };
            FeasibleTreatment { dim: t.dim, value }
        })
        .collect();
    dedupe(problem, snapped, step)
}

pub(crate) fn dedupe(
    problem: &Problem<'_>,
    mut treatments: Vec<FeasibleTreatment>,
    step: f64,
) -> Vec<FeasibleTreatment> {
    let bounds = problem.upper_bounds();
    for j in 1..treatments.len() {
        let taken =
            |t: &FeasibleTreatment, list: &[FeasibleTreatment]| list.iter().any(|u| u.same_as(t));
        if !taken(&treatments[j], &treatments[..j]) {
            continue;
        }
        let t = treatments[j];
        let upper = if step > 0.0 {
            grid_max(bounds[t.dim], step)
        } else {
            bounds[t.dim]
        };
        let delta = if step > 0.0 {
            step
        } else {
            1e-3 * bounds[t.dim]
        };
        let limit = (upper / delta).ceil() as usize + 1;
        'search: for m in 1..=limit {
            for sign in [1.0, -1.0] {
                let v = t.value + sign * m as f64 * delta;
                if !(0.0..=upper).contains(&v) {
                    continue;
                }
                let cand = FeasibleTreatment {
                    dim: t.dim,
                    value: v,
                };
                if !taken(&cand, &treatments[..j]) {
                    treatments[j] = cand;
                    break 'search;
                }
            }
        }
    }
    treatments
}
