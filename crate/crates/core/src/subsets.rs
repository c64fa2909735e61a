//! Exhaustive search over `k`-subsets of candidate treatments.
//!
//! Each candidate is a column of per-individual profits. A subset's value is
//! `Σ_i max_{m∈S} column_m[i]`: individuals take their best offered option.
//! Subsets are enumerated depth-first in lexicographic order while carrying
//! the running per-individual maximum of the prefix, so a leaf costs `O(N)`.

use rayon::prelude::*;

/// `C(n, k)`, saturating at `u128::MAX`.
pub(crate) fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographically first subset among those with maximal value.
pub(crate) fn best_subset(columns: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let m = columns.len();
    assert!(k >= 1 && k <= m, "subset size {k} outside 1..={m}");
    let n = columns[0].len();
    let per_first: Vec<(f64, Vec<usize>)> = (0..=m - k)
        .into_par_iter()
        .map(|first| {
            let mut bufs = vec![vec![0.0; n]; k];
            bufs[0].copy_from_slice(&columns[first]);
            let mut prefix = vec![first];
            let mut best = (f64::NEG_INFINITY, Vec::new());
            if k == 1 {
                best = (columns[first].iter().sum(), prefix);
            } else {
                descend(columns, k, first + 1, &mut prefix, &mut bufs, &mut best);
            }
            best
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for cand in per_first {
        if cand.0 > best.0 {
            best = cand;
        }
    }
    (best.1, best.0)
}

fn descend(
    columns: &[Vec<f64>],
    k: usize,
    start: usize,
    prefix: &mut Vec<usize>,
    bufs: &mut [Vec<f64>],
    best: &mut (f64, Vec<usize>),
) {
    let depth = prefix.len();
    let m = columns.len();
    if depth == k - 1 {
        let running = &bufs[depth - 1];
        for (j, col) in columns.iter().enumerate().take(m).skip(start) {
            let value: f64 = running.iter().zip(col).map(|(a, b)| a.max(*b)).sum();
            if value > best.0 {
                let mut chosen = prefix.clone();
                chosen.push(j);
                *best = (value, chosen);
            }
        }
        return;
    }
    for j in start..=m - (k - depth) {
        let (head, tail) = bufs.split_at_mut(depth);
        let prev = &head[depth - 1];
        for ((out, a), b) in tail[0].iter_mut().zip(prev).zip(&columns[j]) {
            *out = a.max(*b);
        }
        prefix.push(j);
        descend(columns, k, j + 1, prefix, bufs, best);
        prefix.pop();
    }
}
