//! Numeric conventions shared by the causal tree and the CART baseline.
//!
//! Candidate thresholds sit at midpoints of consecutive distinct feature
//! values; `value < threshold` routes left. Floating-point sums of the same
//! partition taken in different orders can disagree in the last bits, so
//! two rules make the argmax reproducible:
//!
//! * a mean difference within `ZERO_TOL * scale` of zero is treated as zero,
//!   where `scale` is the largest `|outcome|` at the node;
//! * a candidate replaces the incumbent only if its gain exceeds the
//!   incumbent's by more than `TIE_TOL * scale²` (times the gain's count
//!   unit), so near-equal gains resolve to the lowest feature index and then
//!   the lowest threshold.

pub const ZERO_TOL: f64 = 1e-10;
pub const TIE_TOL: f64 = 1e-10;

/// Largest absolute outcome in the slice.
pub fn outcome_scale<'a>(outcomes: impl IntoIterator<Item = &'a f64>) -> f64 {
    outcomes.into_iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

pub fn snap_gap(diff: f64, scale: f64) -> f64 {
    if diff.abs() <= ZERO_TOL * scale {
        0.0
    } else {
        diff
    }
}

pub fn beats(candidate: f64, incumbent: Option<f64>, tie_tol: f64) -> bool {
    match incumbent {
        None => candidate > 0.0,
        Some(best) => candidate > best + tie_tol,
    }
}

/// Midpoint between two consecutive distinct sorted values, or `None` when
/// the values are so close that the midpoint would not separate them.
pub fn midpoint(lo: f64, hi: f64) -> Option<f64> {
    let mid = (lo + hi) / 2.0;
    (lo < mid && mid <= hi).then_some(mid)
}

/// Mean taken over the values in ascending order, so equal multisets give
/// bit-identical means.
pub fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}
