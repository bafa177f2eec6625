//! Randomized audit of the mechanism's invariants.
//!
//! Instances come from a predictor fitted on the scalar synthetic model.
//! Some bids are snapped exactly onto their lower bound and some copy a
//! rival's bid, so the boundary and tie-break paths are exercised.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::conformal::oracle::dual_threshold_oracle;
use crate::conformal::{
    calibrate, compute_group_threshold, predict_interval, CalibratedPredictor, PredictionInterval,
    Threshold,
};
use crate::dataset::{GroupCatalog, HistoricalRecord, SyntheticModel, SyntheticSpec};
use crate::error::{CoadError, Result};
use crate::experiments::{fit_pipeline, replication_rng, EstimatorConfig};
use crate::mechanism::{
    audit_intervals, coad_outcome, uniform_grid, QualificationRule, Violation, ViolationKind,
};
use crate::regression::{FeatureMap, FittedEstimator};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditConfig {
    pub cases: usize,
    pub seed: u64,
    pub rule: QualificationRule,
    /// Points in each bidder's deviation grid on `[0, 1.5 max bid]`.
    pub grid_points: usize,
    pub max_bidders: usize,
    /// Random calibration sets compared against the bisection oracle.
    pub oracle_sets: usize,
    /// Training size for the audited predictor.
    pub training_size: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            cases: 500,
            seed: 0,
            rule: QualificationRule::AtLeastLower,
            grid_points: 101,
            max_bidders: 8,
            oracle_sets: 100,
            training_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseViolation {
    pub case: usize,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AuditReport {
    pub cases: usize,
    pub bidders_checked: usize,
    pub profitable_deviations: usize,
    pub negative_utilities: usize,
    pub threshold_inconsistencies: usize,
    /// The first anomalies found, for inspection.
    pub examples: Vec<CaseViolation>,
    pub prefix_pairs: usize,
    pub monotonicity_violations: usize,
    pub oracle_sets: usize,
    pub oracle_mismatches: usize,
    pub oracle_max_abs_diff: f64,
    pub homogeneity_cases: usize,
    pub homogeneity_failures: usize,
    pub translation_cases: usize,
    pub translation_failures: usize,
}

const KEPT_EXAMPLES: usize = 20;

impl AuditReport {
    pub fn anomalies(&self) -> usize {
        self.profitable_deviations
            + self.negative_utilities
            + self.threshold_inconsistencies
            + self.monotonicity_violations
            + self.oracle_mismatches
            + self.homogeneity_failures
            + self.translation_failures
    }

    pub fn is_clean(&self) -> bool {
        self.anomalies() == 0
    }
}

/// Bidders drawn for one audit case: intervals and truthful bids.
struct Case {
    intervals: Vec<PredictionInterval>,
    bids: Vec<f64>,
}

fn draw_case<R: Rng>(
    model: &SyntheticModel,
    pred: &CalibratedPredictor,
    max_bidders: usize,
    snap: bool,
    rng: &mut R,
) -> Result<Case> {
    let group = rng.random_range(0..model.catalog().len());
    let m = rng.random_range(1..=max_bidders);
    let mut intervals = Vec::with_capacity(m);
    let mut bids = Vec::with_capacity(m);
    for _ in 0..m {
        let (x, v) = model.sample_bidder(group, rng);
        let iv = predict_interval(pred, &x, group)?;
        let bid = if snap && iv.lower.is_finite() && iv.lower >= 0.0 && rng.random_bool(0.3) {
            iv.lower
        } else if snap && !bids.is_empty() && rng.random_bool(0.15) {
            *bids.choose(rng).expect("nonempty")
        } else {
            v.max(0.0)
        };
        intervals.push(iv);
        bids.push(bid);
    }
    Ok(Case { intervals, bids })
}

fn scale_interval(iv: &PredictionInterval, lambda: f64) -> PredictionInterval {
    let t = if iv.is_bounded() {
        Threshold::Finite(iv.half_width * lambda)
    } else {
        Threshold::Infinite
    };
    PredictionInterval::new(iv.center * lambda, t)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Scaling every bid and interval by `lambda` keeps the winner and scales the
/// payments.
fn homogeneous(case: &Case, lambda: f64, rule: QualificationRule) -> bool {
    let base = coad_outcome(&case.intervals, &case.bids, rule);
    let ivs: Vec<_> = case
        .intervals
        .iter()
        .map(|iv| scale_interval(iv, lambda))
        .collect();
    let bids: Vec<_> = case.bids.iter().map(|b| b * lambda).collect();
    let scaled = coad_outcome(&ivs, &bids, rule);
    base.winner == scaled.winner
        && base
            .payments
            .iter()
            .zip(&scaled.payments)
            .all(|(p, q)| close(p * lambda, *q))
}

/// Shifting calibration values and the estimator's intercept by the same
/// constant leaves the thresholds unchanged. Values are dyadic so every
/// subtraction is exact.
fn translation_invariant<R: Rng>(rng: &mut R, alpha: f64) -> Result<bool> {
    let catalog = GroupCatalog::anonymous(2)?;
    let map = FeatureMap::joint(1, 1, catalog.encoding_dim());
    let intercept = rng.random_range(-64i32..=64) as f64 / 4.0;
    let shift = rng.random_range(-256i32..=256) as f64 / 8.0;
    let n = rng.random_range(0..=30);
    let cal: Vec<HistoricalRecord> = (0..n)
        .map(|_| HistoricalRecord {
            bidder_features: vec![0.0],
            item_group: rng.random_range(0..2),
            value: rng.random_range(0u32..=1 << 14) as f64 / 256.0,
        })
        .collect();
    let moved: Vec<HistoricalRecord> = cal
        .iter()
        .map(|r| HistoricalRecord {
            value: r.value + shift,
            ..r.clone()
        })
        .collect();
    let est = FittedEstimator::zero(map).shifted(intercept);
    let a = calibrate(&est, &cal, alpha, &catalog)?;
    let b = calibrate(&est.shifted(shift), &moved, alpha, &catalog)?;
    Ok(a.thresholds() == b.thresholds())
}

/// Closed-form threshold against the bisection oracle on a random score set.
fn oracle_gap<R: Rng>(rng: &mut R) -> (bool, f64) {
    let alpha = *[0.05, 0.1, 0.3, 0.5].choose(rng).expect("nonempty");
    let n = rng.random_range(0..=20);
    let coarse = rng.random_bool(0.3);
    let mut scores: Vec<f64> = (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0u32..=6) as f64 * 0.5
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    let oracle = dual_threshold_oracle(&scores, alpha, 1e-12);
    scores.sort_by(f64::total_cmp);
    match (compute_group_threshold(&scores, alpha), oracle) {
        (Threshold::Infinite, Threshold::Infinite) => (true, 0.0),
        (Threshold::Finite(a), Threshold::Finite(b)) => {
            let d = (a - b).abs();
            (d <= 1e-9, d)
        }
        _ => (false, f64::INFINITY),
    }
}

/// Runs every check of the audit.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    if cfg.cases == 0 {
        return Err(CoadError::Config("audit needs at least one case".into()));
    }
    if cfg.max_bidders == 0 || cfg.grid_points < 2 {
        return Err(CoadError::Config(
            "audit needs at least one bidder and two grid points".into(),
        ));
    }
    let spec = SyntheticSpec::low_dim();
    let model = SyntheticModel::new(&spec)?;
    let mut rng = replication_rng(cfg.seed, 0, u64::MAX);
    let (pred, _, _) = fit_pipeline(
        &model,
        cfg.training_size,
        &EstimatorConfig::default_for(&spec),
        0.1,
        &mut rng,
    )?;

    let mut report = AuditReport {
        cases: cfg.cases,
        ..Default::default()
    };
    for case_idx in 0..cfg.cases {
        let mut rng = replication_rng(cfg.seed, case_idx as u64, 1);
        let case = draw_case(&model, &pred, cfg.max_bidders, true, &mut rng)?;
        let top = case.bids.iter().copied().fold(0.0, f64::max);
        let grid = uniform_grid(1.5 * top.max(1.0), cfg.grid_points);
        report.bidders_checked += case.bids.len();
        for v in audit_intervals(&case.intervals, &case.bids, &grid, cfg.rule) {
            match v.kind {
                ViolationKind::ProfitableDeviation { .. } => report.profitable_deviations += 1,
                ViolationKind::NegativeUtility { .. } => report.negative_utilities += 1,
                ViolationKind::ThresholdInconsistency { .. } => {
                    report.threshold_inconsistencies += 1
                }
            }
            if report.examples.len() < KEPT_EXAMPLES {
                report.examples.push(CaseViolation {
                    case: case_idx,
                    violation: v,
                });
            }
        }

        let mut prev: Option<f64> = None;
        for m in 1..=case.bids.len() {
            let r = coad_outcome(&case.intervals[..m], &case.bids[..m], cfg.rule).revenue();
            if let Some(p) = prev {
                report.prefix_pairs += 1;
                if r < p {
                    report.monotonicity_violations += 1;
                }
            }
            prev = Some(r);
        }

        let generic = draw_case(&model, &pred, cfg.max_bidders, false, &mut rng)?;
        let lambda = rng.random_range(0.1..10.0);
        report.homogeneity_cases += 1;
        if !homogeneous(&generic, lambda, cfg.rule) {
            report.homogeneity_failures += 1;
        }
        report.translation_cases += 1;
        if !translation_invariant(&mut rng, 0.1)? {
            report.translation_failures += 1;
        }
    }

    let mut rng = replication_rng(cfg.seed, 0, 2);
    for _ in 0..cfg.oracle_sets {
        let (ok, d) = oracle_gap(&mut rng);
        report.oracle_sets += 1;
        if !ok {
            report.oracle_mismatches += 1;
        }
        if d.is_finite() {
            report.oracle_max_abs_diff = report.oracle_max_abs_diff.max(d);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cases_is_an_error() {
        let cfg = AuditConfig {
            cases: 0,
            ..Default::default()
        };
        assert!(run_audit(&cfg).is_err());
    }

    #[test]
    fn small_audit_is_clean() {
        let cfg = AuditConfig {
            cases: 40,
            oracle_sets: 40,
            seed: 5,
            ..Default::default()
        };
        let r = run_audit(&cfg).unwrap();
        assert!(r.is_clean(), "{r:#?}");
        assert!(r.bidders_checked >= 40);
        assert_eq!(r.oracle_sets, 40);
    }

    #[test]
    fn strict_rule_is_caught() {
        let cfg = AuditConfig {
            cases: 40,
            oracle_sets: 0,
            seed: 5,
            rule: QualificationRule::StrictlyAboveLower,
            ..Default::default()
        };
        let r = run_audit(&cfg).unwrap();
        assert!(r.threshold_inconsistencies >= 1, "{r:#?}");
        assert!(!r.examples.is_empty());
    }

    #[test]
    fn translation_check_is_exact() {
        let mut rng = replication_rng(3, 0, 0);
        for _ in 0..50 {
            assert!(translation_invariant(&mut rng, 0.2).unwrap());
        }
    }
}
