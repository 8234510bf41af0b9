//! Small numeric utilities shared across modules: deterministic seed
//! derivation for independent RNG streams and the common water-level search
//! used by both power-allocation rules.

/// SplitMix64 finalizer; good avalanche behavior for seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
///
/// Distinct paths give statistically independent streams, and the mapping is
/// platform-independent, so campaigns replay bit-identically regardless of
/// thread scheduling.
pub(crate) fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(parent ^ 0x6a09_e667_f3bc_c908);
    for &part in path {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

/// Solves `sum_i max(level - threshold[i], 0) = budget` for the water level.
///
/// Thresholds may be `f64::INFINITY` (stream permanently inactive). Returns
/// `None` when no stream can ever become active (all thresholds infinite) or
/// the budget is not positive; otherwise returns the level, with the poured
/// total matching the budget to within `tol_abs`.
pub(crate) fn water_level(thresholds: &[f64], budget: f64, tol_abs: f64) -> Option<f64> {
    let finite_max = thresholds
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !finite_max.is_finite() || budget <= 0.0 {
        return None;
    }

    let poured = |level: f64| -> f64 {
        thresholds
            .iter()
            .map(|&t| if level > t { level - t } else { 0.0 })
            .sum()
    };

    // poured(·) is continuous, nondecreasing, and hits `budget` inside
    // [min threshold, finite_max + 2·budget]; the doubled margin absorbs
    // cancellation when thresholds dwarf the budget. Bisect until the poured
    // total matches the budget.
    let mut lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        lo = 0.0;
    }
    let mut hi = finite_max + 2.0 * budget;
    debug_assert!(poured(hi) >= budget);

    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let residual = poured(mid) - budget;
        if residual.abs() <= tol_abs {
            return Some(mid);
        }
        if residual > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Interval exhausted below f64 resolution; the lower edge keeps the
    // poured total at or under the budget.
    Some(lo)
}
