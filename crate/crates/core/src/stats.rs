//! Small descriptive-statistics helpers shared across modules.

/// Arithmetic mean computed as an offset from the first element, so a
/// constant slice returns that constant bit-for-bit.
pub(crate) fn mean(values: &[f64]) -> f64 {
    let Some(&anchor) = values.first() else {
        return f64::NAN;
    };
    let offset: f64 = values.iter().map(|v| v - anchor).sum();
    anchor + offset / values.len() as f64
}

/// Population standard deviation about `mean`.
pub(crate) fn population_std(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / values.len() as f64).sqrt()
}

/// Percentile `p` in [0, 100] of an already sorted slice, linearly
/// interpolating between the closest order statistics.
pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_constants_is_exact() {
        let v = vec![0.1; 4032];
        assert_eq!(mean(&v), 0.1);
    }

    #[test]
    fn percentiles_of_five_points() {
        let s = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert_eq!(percentile_sorted(&s, 25.0), -1.0);
        assert_eq!(percentile_sorted(&s, 75.0), 1.0);
        assert_eq!(percentile_sorted(&s, 50.0), 0.0);
        assert!((percentile_sorted(&s, 10.0) - (-1.6)).abs() < 1e-12);
    }
}
