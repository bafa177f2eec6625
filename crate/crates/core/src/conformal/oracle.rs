//! Literal dual computation of the group threshold.
//!
//! For a candidate score `S` the augmented one-group quantile regression
//! minimizes the pinball loss over a constant `g` fitted to the calibration
//! scores plus `S`. Its minimizers form an interval `[g_lo, g_hi]` of
//! augmented values, and complementary slackness pins the dual weight of the
//! augmented point:
//!
//! * `S < g` for some optimal `g`  => weight is `-alpha` (below `1 - alpha`)
//! * `S > g` for some optimal `g`  => weight is `1 - alpha`
//! * `S = g_lo = g_hi`             => weight anywhere in `[-alpha, 1 - alpha]`;
//!   counted as accepted (closed interval)
//!
//! The accepted set is a down-set in `S`, so its supremum is found by
//! bisection. Nothing here uses the order-statistic index.

use super::Threshold;

fn pinball(alpha: f64, theta: f64, r: f64) -> f64 {
    if r >= theta {
        (1.0 - alpha) * (r - theta)
    } else {
        alpha * (theta - r)
    }
}

/// Range of minimizers of the augmented pinball objective.
fn augmented_minimizers(scores: &[f64], candidate: f64, alpha: f64) -> (f64, f64) {
    let mut points: Vec<f64> = scores.to_vec();
    points.push(candidate);
    // Piecewise-linear convex objective: some data point is always optimal.
    let losses: Vec<f64> = points
        .iter()
        .map(|&theta| points.iter().map(|&r| pinball(alpha, theta, r)).sum())
        .collect();
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = points.iter().map(|p| p.abs()).fold(1.0, f64::max) * points.len() as f64;
    let slack = 1e-12 * scale;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&p, &l) in points.iter().zip(&losses) {
        if l <= best + slack {
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    (lo, hi)
}

/// Whether the dual weight of the augmented point at score `candidate` stays
/// strictly below `1 - alpha`.
pub fn dual_weight_below_level(scores: &[f64], alpha: f64, candidate: f64) -> bool {
    let (lo, hi) = augmented_minimizers(scores, candidate, alpha);
    if candidate < hi {
        true
    } else if candidate > hi {
        false
    } else {
        lo == hi
    }
}

/// Threshold by bisection on the dual sign condition, accurate to `tol`.
pub fn dual_threshold_oracle(scores: &[f64], alpha: f64, tol: f64) -> Threshold {
    let top = scores.iter().cloned().fold(0.0, f64::max);
    let mut hi = 2.0 * top + 1.0;
    if dual_weight_below_level(scores, alpha, hi) {
        return Threshold::Infinite;
    }
    let mut lo = -1.0;
    debug_assert!(dual_weight_below_level(scores, alpha, lo));
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dual_weight_below_level(scores, alpha, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Threshold::Finite(lo)
}
