//! Small numeric helpers shared across modules.

/// Inverse golden ratio, `(√5 − 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the maximiser of a unimodal function on `[lo, hi]`.
///
/// `diff(x, y)` must return `f(x) − f(y)`. Taking the difference rather than
/// `f` itself lets callers evaluate it without cancellation, which is what
/// makes sub-1e-8 localisation of a flat maximum possible.
pub fn golden_section_max<F>(diff: F, lo: f64, hi: f64, tol: f64) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    while b - a > tol {
        if diff(c, d) > 0.0 {
            b = d;
            d = c;
            c = b - INV_PHI * (b - a);
        } else {
            a = c;
            c = d;
            d = a + INV_PHI * (b - a);
        }
    }
    0.5 * (a + b)
}

/// `ln(1 + x) − ln(1 + y)` without cancellation.
#[inline]
pub fn ln1p_diff(x: f64, y: f64) -> f64 {
    ((x - y) / (1.0 + y)).ln_1p()
}

/// Mean and sample standard deviation (`n − 1` denominator; zero for `n < 2`).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    // Shifted by the first value so constant input gives sd exactly 0.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Round half away from zero to the nearest multiple of `step`.
#[inline]
pub fn round_to_step(value: f64, step: f64) -> f64 {
    (value / step).round() * step
}

/// Largest multiple of `step` not exceeding `upper` (with a little slack for
/// bounds that are exact multiples but not exactly representable quotients).
#[inline]
pub fn grid_max(upper: f64, step: f64) -> f64 {
    ((upper / step) + 1e-9).floor() * step
}

/// SplitMix64 finaliser; used to derive independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|a, b| (b - a) * (a + b - 2.6), 0.0, 5.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-11);
    }

    #[test]
    fn golden_section_handles_boundary_peaks() {
        let lo = golden_section_max(|a, b| b - a, 0.0, 5.0, 1e-10);
        let hi = golden_section_max(|a, b| a - b, 0.0, 5.0, 1e-10);
        assert!(lo < 1e-9);
        assert!((hi - 5.0).abs() < 1e-9);
    }

    #[test]
    fn round_half_away_from_zero() {
        assert_eq!(round_to_step(1.5, 1.0), 2.0);
        assert_eq!(round_to_step(2.5, 1.0), 3.0);
        assert_eq!(round_to_step(1.125, 0.25), 1.25);
        assert_eq!(round_to_step(0.75, 0.25), 0.75);
    }

    #[test]
    fn moments_and_correlation() {
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (7.0, 0.0));
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn constant_sample_has_zero_sd(v in -1e6..1e6f64, n in 1..200usize) {
                let (m, sd) = mean_sd(&vec![v; n]);
                prop_assert_eq!(m, v);
                prop_assert_eq!(sd, 0.0);
            }
        }
    }
}
