//! Nearest-rank order statistics shared by the 2D and 3D thresholds and HD95.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Validates a retained fraction `p` in `(0, 1]`.
pub fn check_fraction(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fraction must be in (0, 1], got {p}")))
    }
}

/// Zero-based ascending rank `ceil((1 - p) * n)` of the top-`p` threshold,
/// computed as `n - floor(p * n)` so that e.g. `p = 0.35, n = 100` lands on
/// rank 65 despite binary rounding. Clamped to `n - 1`.
pub fn top_fraction_rank(n: usize, p: f64) -> usize {
    debug_assert!(n > 0);
    let keep = (p * n as f64 + 1e-9).floor() as usize;
    n.saturating_sub(keep).min(n - 1)
}

/// Threshold `t` such that `value >= t` keeps the top fraction `p` (ties included).
pub fn top_fraction_threshold<T: Scalar>(values: &[T], p: f64) -> Result<T> {
    check_fraction(p)?;
    if values.is_empty() {
        return Err(Error::Degenerate("cannot threshold an empty set of values".into()));
    }
    let rank = top_fraction_rank(values.len(), p);
    let mut scratch = values.to_vec();
    let (_, t, _) = scratch.select_nth_unstable_by(rank, total_cmp);
    Ok(*t)
}

#[inline]
pub(crate) fn total_cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Nearest-rank percentile (`q` in `(0, 1]`): the value at one-based rank `ceil(q * n)`.
pub fn nearest_rank(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let idx = rank.min(n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(idx, f64::total_cmp);
    Some(*v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_matches_ceiling_formula() {
        assert_eq!(top_fraction_rank(100, 0.35), 65);
        assert_eq!(top_fraction_rank(1000, 0.05), 950);
        assert_eq!(top_fraction_rank(10, 1.0), 0);
        assert_eq!(top_fraction_rank(10, 0.01), 9);
        for n in 1..200usize {
            for k in 1..=20 {
                let p = k as f64 / 20.0;
                // exact rational ceiling of (1 - k/20) * n
                let exact = ((20 - k) * n).div_ceil(20);
                assert_eq!(top_fraction_rank(n, p), exact.min(n - 1), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn threshold_keeps_ties() {
        let v = [3.0f64; 10];
        assert_eq!(top_fraction_threshold(&v, 0.2).unwrap(), 3.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(top_fraction_threshold(&v, 0.35).unwrap(), 66.0);
        assert!(top_fraction_threshold::<f64>(&[], 0.5).is_err());
        assert!(top_fraction_threshold(&v, 0.0).is_err());
        assert!(top_fraction_threshold(&v, 1.5).is_err());
    }

    #[test]
    fn nearest_rank_percentile() {
        let mut v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&mut v, 0.95), Some(19.0));
        let mut v = vec![5.0];
        assert_eq!(nearest_rank(&mut v, 0.95), Some(5.0));
        let mut v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(nearest_rank(&mut v, 0.95), Some(95.0));
        assert_eq!(nearest_rank(&mut [], 0.95), None);
    }
}
