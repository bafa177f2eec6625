//! The conformal auction and its baselines.
//!
//! Each bidder's conformal lower bound acts as a bidder-specific reserve. A
//! bid qualifies when it reaches its lower bound; the qualifying bidder with
//! the highest bid wins (ties go to the larger lower bound, then the lower
//! index) and pays the smallest bid that would still have won:
//!
//! ```text
//! price = max( max(0, lower_w), max_{j != w} virtual_j )
//! ```

use serde::{Deserialize, Serialize};

use crate::conformal::{predict_interval, CalibratedPredictor, PredictionInterval};
use crate::error::{CoadError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bidder {
    pub features: Vec<f64>,
    pub bid: f64,
}

/// One new auction: the item group and the participating bidders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionInstance {
    pub group: usize,
    pub bidders: Vec<Bidder>,
}

impl AuctionInstance {
    pub fn new(group: usize, bidders: Vec<Bidder>) -> Result<Self> {
        if bidders.is_empty() {
            return Err(CoadError::Config(
                "an auction needs at least one bidder".into(),
            ));
        }
        if let Some(b) = bidders
            .iter()
            .find(|b| !(b.bid >= 0.0) || !b.bid.is_finite())
        {
            return Err(CoadError::Config(format!(
                "bids must be finite and nonnegative, got {}",
                b.bid
            )));
        }
        Ok(Self { group, bidders })
    }

    pub fn m_star(&self) -> usize {
        self.bidders.len()
    }

    pub fn bids(&self) -> Vec<f64> {
        self.bidders.iter().map(|b| b.bid).collect()
    }

    /// The same auction restricted to its first `m` bidders.
    pub fn prefix(&self, m: usize) -> Self {
        Self {
            group: self.group,
            bidders: self.bidders[..m.min(self.bidders.len())].to_vec(),
        }
    }
}

/// Comparison used to decide whether a bid reaches its lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualificationRule {
    /// `bid >= lower`.
    #[default]
    AtLeastLower,
    /// `bid > lower`. Not incentive-consistent at the boundary; used to check
    /// that the audit detects boundary faults.
    StrictlyAboveLower,
}

impl QualificationRule {
    pub fn qualifies(self, bid: f64, lower: f64) -> bool {
        match self {
            QualificationRule::AtLeastLower => bid >= lower,
            QualificationRule::StrictlyAboveLower => bid > lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidderAssessment {
    pub interval: PredictionInterval,
    /// `max(0, interval.lower)`.
    pub reserve: f64,
    pub virtual_value: f64,
    /// Set when the group threshold is infinite, in which case the reserve
    /// degenerates to zero.
    pub unbounded_interval: bool,
}

impl BidderAssessment {
    pub fn new(interval: PredictionInterval, bid: f64, rule: QualificationRule) -> Self {
        let virtual_value = if rule.qualifies(bid, interval.lower) {
            bid
        } else {
            0.0
        };
        Self {
            interval,
            reserve: interval.lower.max(0.0),
            virtual_value,
            unbounded_interval: !interval.is_bounded(),
        }
    }

    pub fn lower(&self) -> f64 {
        self.interval.lower
    }
}

/// Intervals for every bidder of the instance.
pub fn bidder_intervals(
    pred: &CalibratedPredictor,
    instance: &AuctionInstance,
) -> Result<Vec<PredictionInterval>> {
    let d = pred.bidder_dim();
    instance
        .bidders
        .iter()
        .map(|b| {
            if b.features.len() != d {
                return Err(CoadError::DimensionMismatch {
                    expected: d,
                    got: b.features.len(),
                    context: "bidder features",
                });
            }
            predict_interval(pred, &b.features, instance.group)
        })
        .collect()
}

pub fn assess_intervals(
    intervals: &[PredictionInterval],
    bids: &[f64],
    rule: QualificationRule,
) -> Vec<BidderAssessment> {
    intervals
        .iter()
        .zip(bids)
        .map(|(iv, &b)| BidderAssessment::new(*iv, b, rule))
        .collect()
}

pub fn assess(
    pred: &CalibratedPredictor,
    instance: &AuctionInstance,
) -> Result<Vec<BidderAssessment>> {
    let intervals = bidder_intervals(pred, instance)?;
    Ok(assess_intervals(
        &intervals,
        &instance.bids(),
        QualificationRule::AtLeastLower,
    ))
}

/// Winner index, or `None` when every virtual value is zero.
pub fn allocate(assessments: &[BidderAssessment]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, a) in assessments.iter().enumerate() {
        if a.virtual_value <= 0.0 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &assessments[b];
                let better = a.virtual_value > cur.virtual_value
                    || (a.virtual_value == cur.virtual_value && a.lower() > cur.lower());
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Lowest winning bid for `winner` given everyone else's virtual values.
pub fn threshold_price(assessments: &[BidderAssessment], bidder: usize) -> f64 {
    let rivals = assessments
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != bidder)
        .map(|(_, a)| a.virtual_value)
        .fold(0.0, f64::max);
    assessments[bidder].reserve.max(rivals)
}

pub fn payment(assessments: &[BidderAssessment], winner: usize) -> Result<f64> {
    match assessments.get(winner) {
        Some(a) if a.virtual_value > 0.0 => Ok(threshold_price(assessments, winner)),
        Some(_) => Err(CoadError::Contract(format!(
            "bidder {winner} has zero virtual value and cannot be charged as winner"
        ))),
        None => Err(CoadError::Contract(format!(
            "no bidder with index {winner}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Coad,
    SecondPrice,
    UniformReserve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub mechanism: MechanismKind,
    pub allocation: Vec<u8>,
    pub payments: Vec<f64>,
    pub winner: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assessments: Vec<BidderAssessment>,
}

impl AuctionOutcome {
    fn retained(mechanism: MechanismKind, m: usize, assessments: Vec<BidderAssessment>) -> Self {
        Self {
            mechanism,
            allocation: vec![0; m],
            payments: vec![0.0; m],
            winner: None,
            assessments,
        }
    }

    fn sold(
        mechanism: MechanismKind,
        m: usize,
        winner: usize,
        price: f64,
        assessments: Vec<BidderAssessment>,
    ) -> Self {
        let mut out = Self::retained(mechanism, m, assessments);
        out.allocation[winner] = 1;
        out.payments[winner] = price;
        out.winner = Some(winner);
        out
    }

    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }

    /// Utility `v_i a_i - p_i` of bidder `i` with value `value`.
    pub fn utility(&self, i: usize, value: f64) -> f64 {
        value * f64::from(self.allocation[i]) - self.payments[i]
    }

    pub fn any_unbounded_interval(&self) -> bool {
        self.assessments.iter().any(|a| a.unbounded_interval)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The conformal auction on precomputed intervals.
pub fn coad_outcome(
    intervals: &[PredictionInterval],
    bids: &[f64],
    rule: QualificationRule,
) -> AuctionOutcome {
    let assessments = assess_intervals(intervals, bids, rule);
    match allocate(&assessments) {
        None => AuctionOutcome::retained(MechanismKind::Coad, bids.len(), assessments),
        Some(w) => {
            let price = threshold_price(&assessments, w);
            AuctionOutcome::sold(MechanismKind::Coad, bids.len(), w, price, assessments)
        }
    }
}

pub fn run_coad(pred: &CalibratedPredictor, instance: &AuctionInstance) -> Result<AuctionOutcome> {
    run_coad_with_rule(pred, instance, QualificationRule::AtLeastLower)
}

pub fn run_coad_with_rule(
    pred: &CalibratedPredictor,
    instance: &AuctionInstance,
    rule: QualificationRule,
) -> Result<AuctionOutcome> {
    let intervals = bidder_intervals(pred, instance)?;
    Ok(coad_outcome(&intervals, &instance.bids(), rule))
}

/// Index of the highest value, lowest index on ties.
fn argmax_first(values: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    values.fold(None, |best, (i, v)| match best {
        Some((_, bv)) if bv >= v => best,
        _ => Some((i, v)),
    })
}

pub fn second_price(instance: &AuctionInstance) -> AuctionOutcome {
    second_price_bids(&instance.bids())
}

pub fn second_price_bids(bids: &[f64]) -> AuctionOutcome {
    let m = bids.len();
    let (w, _) = argmax_first(bids.iter().copied().enumerate()).expect("at least one bid");
    let second = bids
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != w)
        .map(|(_, &b)| b)
        .fold(0.0, f64::max);
    AuctionOutcome::sold(MechanismKind::SecondPrice, m, w, second, Vec::new())
}

/// Realized welfare: the highest value among the bidders.
pub fn welfare_oracle(instance: &AuctionInstance) -> f64 {
    instance.bids().into_iter().fold(0.0, f64::max)
}

pub fn uniform_reserve_second_price(instance: &AuctionInstance, reserve: f64) -> AuctionOutcome {
    uniform_reserve_bids(&instance.bids(), reserve)
}

pub fn uniform_reserve_bids(bids: &[f64], reserve: f64) -> AuctionOutcome {
    let m = bids.len();
    let qualifying = || {
        bids.iter()
            .copied()
            .enumerate()
            .filter(|&(_, b)| b >= reserve)
    };
    match argmax_first(qualifying()) {
        None => AuctionOutcome::retained(MechanismKind::UniformReserve, m, Vec::new()),
        Some((w, _)) => {
            let second = qualifying()
                .filter(|&(j, _)| j != w)
                .map(|(_, b)| b)
                .fold(reserve, f64::max);
            AuctionOutcome::sold(MechanismKind::UniformReserve, m, w, second, Vec::new())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    /// A misreport yields strictly more utility than the truthful bid.
    ProfitableDeviation {
        deviation_bid: f64,
        truthful_utility: f64,
        deviation_utility: f64,
    },
    /// Truthful bidding yields negative utility.
    NegativeUtility { utility: f64 },
    /// The charged price is not the boundary between losing and winning bids.
    ThresholdInconsistency {
        price: f64,
        probe_bid: f64,
        won: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub bidder: usize,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

/// `points` evenly spaced values on `[0, upper]`.
pub fn uniform_grid(upper: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| upper * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Checks every bidder's incentive to deviate from truthful bidding.
///
/// Bids are taken as true values. For each bidder, utility at the truthful
/// bid is compared with the utility at each point of `bid_grid` and at the
/// analytic threshold price, holding other bids fixed. Gains above
/// `1e-9 * max(1, value)` are reported, as are negative truthful utilities and
/// winners whose price does not separate losing from winning bids.
pub fn ic_audit(
    pred: &CalibratedPredictor,
    instance: &AuctionInstance,
    bid_grid: &[f64],
    rule: QualificationRule,
) -> Result<Vec<Violation>> {
    let intervals = bidder_intervals(pred, instance)?;
    Ok(audit_intervals(
        &intervals,
        &instance.bids(),
        bid_grid,
        rule,
    ))
}

pub fn audit_intervals(
    intervals: &[PredictionInterval],
    values: &[f64],
    bid_grid: &[f64],
    rule: QualificationRule,
) -> Vec<Violation> {
    let truthful = coad_outcome(intervals, values, rule);
    let mut violations = Vec::new();
    let mut bids = values.to_vec();

    for (i, &value) in values.iter().enumerate() {
        let tol = 1e-9 * value.max(1.0);
        let u_true = truthful.utility(i, value);
        if u_true < -tol {
            violations.push(Violation {
                bidder: i,
                kind: ViolationKind::NegativeUtility { utility: u_true },
            });
        }

        let threshold = threshold_price(&truthful.assessments, i);
        for &b in bid_grid.iter().chain(std::iter::once(&threshold)) {
            bids[i] = b;
            let u = coad_outcome(intervals, &bids, rule).utility(i, value);
            if u > u_true + tol {
                violations.push(Violation {
                    bidder: i,
                    kind: ViolationKind::ProfitableDeviation {
                        deviation_bid: b,
                        truthful_utility: u_true,
                        deviation_utility: u,
                    },
                });
            }
        }
        bids[i] = value;
    }

    if let Some(w) = truthful.winner {
        let price = truthful.payments[w];
        let rivals = truthful
            .assessments
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != w)
            .map(|(_, a)| a.virtual_value)
            .fold(0.0, f64::max);
        let step = 1e-9 * price.max(1.0);
        let mut probe = |b: f64, must_win: bool| {
            bids[w] = b;
            let won = coad_outcome(intervals, &bids, rule).winner == Some(w);
            if won != must_win {
                violations.push(Violation {
                    bidder: w,
                    kind: ViolationKind::ThresholdInconsistency {
                        price,
                        probe_bid: b,
                        won,
                    },
                });
            }
        };
        if price > 0.0 {
            probe(price - step, false);
            // At exactly the price the bidder must win unless a rival ties
            // and holds tie-break priority.
            if price > rivals {
                probe(price, true);
            }
        }
        probe(price + step, true);
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::Threshold;

    fn iv(lower: f64) -> PredictionInterval {
        PredictionInterval::new(lower + 1.0, Threshold::Finite(1.0))
    }

    fn outcome(lowers: &[f64], bids: &[f64]) -> AuctionOutcome {
        let ivs: Vec<_> = lowers.iter().map(|&l| iv(l)).collect();
        coad_outcome(&ivs, bids, QualificationRule::AtLeastLower)
    }

    #[test]
    fn virtual_values_at_and_around_the_bound() {
        let r = QualificationRule::AtLeastLower;
        assert_eq!(BidderAssessment::new(iv(3.0), 5.0, r).virtual_value, 5.0);
        assert_eq!(BidderAssessment::new(iv(3.0), 2.0, r).virtual_value, 0.0);
        assert_eq!(BidderAssessment::new(iv(3.0), 3.0, r).virtual_value, 3.0);
        let strict = QualificationRule::StrictlyAboveLower;
        assert_eq!(
            BidderAssessment::new(iv(3.0), 3.0, strict).virtual_value,
            0.0
        );
    }

    #[test]
    fn reserve_clips_negative_lower_bounds() {
        let a = BidderAssessment::new(iv(-2.0), 1.0, QualificationRule::AtLeastLower);
        assert_eq!(a.reserve, 0.0);
        assert_eq!(a.virtual_value, 1.0);
    }

    #[test]
    fn infinite_interval_lets_everyone_qualify() {
        let unbounded = PredictionInterval::new(5.0, Threshold::Infinite);
        let a = BidderAssessment::new(unbounded, 0.5, QualificationRule::AtLeastLower);
        assert_eq!(a.virtual_value, 0.5);
        assert_eq!(a.reserve, 0.0);
        assert!(a.unbounded_interval);
    }

    #[test]
    fn allocation_rules() {
        let mk = |v: &[f64], l: &[f64]| -> Vec<BidderAssessment> {
            v.iter()
                .zip(l)
                .map(|(&v, &l)| BidderAssessment {
                    interval: iv(l),
                    reserve: l.max(0.0),
                    virtual_value: v,
                    unbounded_interval: false,
                })
                .collect()
        };
        assert_eq!(allocate(&mk(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0])), None);
        assert_eq!(allocate(&mk(&[7.0, 9.0, 4.0], &[1.0, 1.0, 1.0])), Some(1));
        assert_eq!(allocate(&mk(&[6.0, 6.0], &[2.0, 5.0])), Some(1));
        assert_eq!(allocate(&mk(&[6.0, 6.0], &[4.0, 4.0])), Some(0));
    }

    #[test]
    fn worked_payments() {
        let o = outcome(&[4.0, 5.0], &[10.0, 6.0]);
        assert_eq!(o.allocation, vec![1, 0]);
        assert_eq!(o.payments, vec![6.0, 0.0]);

        let o = outcome(&[3.0], &[5.0]);
        assert_eq!(o.payments, vec![3.0]);

        let o = outcome(&[4.0, 3.0], &[10.0, 2.0]);
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.payments, vec![4.0, 0.0]);

        let o = outcome(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]);
        assert_eq!(o.winner, None);
        assert_eq!(o.revenue(), 0.0);
    }

    #[test]
    fn payment_without_winner_is_contract_error() {
        let a = assess_intervals(&[iv(4.0)], &[1.0], QualificationRule::AtLeastLower);
        assert!(matches!(payment(&a, 0), Err(CoadError::Contract(_))));
        assert!(payment(&a, 3).is_err());
    }

    #[test]
    fn baselines() {
        let inst = |bids: &[f64]| {
            AuctionInstance::new(
                0,
                bids.iter()
                    .map(|&b| Bidder {
                        features: vec![],
                        bid: b,
                    })
                    .collect(),
            )
            .unwrap()
        };
        let sp = second_price(&inst(&[10.0, 6.0]));
        assert_eq!((sp.winner, sp.revenue()), (Some(0), 6.0));
        assert_eq!(second_price(&inst(&[4.0])).revenue(), 0.0);
        let tie = second_price(&inst(&[5.0, 5.0]));
        assert_eq!((tie.winner, tie.revenue()), (Some(0), 5.0));

        assert_eq!(welfare_oracle(&inst(&[10.0, 6.0])), 10.0);
        assert_eq!(welfare_oracle(&inst(&[3.5])), 3.5);

        let ur = uniform_reserve_second_price(&inst(&[10.0, 6.0]), 8.0);
        assert_eq!((ur.winner, ur.revenue()), (Some(0), 8.0));
        let ur0 = uniform_reserve_second_price(&inst(&[10.0, 6.0]), 0.0);
        assert_eq!(ur0.payments, sp.payments);
        let none = uniform_reserve_second_price(&inst(&[1.0, 2.0]), 3.0);
        assert_eq!(none.winner, None);
    }

    #[test]
    fn instance_validation() {
        assert!(AuctionInstance::new(0, vec![]).is_err());
        assert!(AuctionInstance::new(
            0,
            vec![Bidder {
                features: vec![],
                bid: -1.0
            }]
        )
        .is_err());
    }

    #[test]
    fn audit_is_clean_on_worked_instance_and_flags_strict_rule() {
        let ivs = [iv(4.0), iv(5.0)];
        let values = [10.0, 6.0];
        let grid = uniform_grid(20.0, 101);
        assert!(audit_intervals(&ivs, &values, &grid, QualificationRule::AtLeastLower).is_empty());

        // Winner priced at its own lower bound: the strict rule makes the
        // price itself a losing bid.
        let ivs = [iv(4.0), iv(3.0)];
        let values = [10.0, 2.0];
        assert!(audit_intervals(&ivs, &values, &grid, QualificationRule::AtLeastLower).is_empty());
        let v = audit_intervals(&ivs, &values, &grid, QualificationRule::StrictlyAboveLower);
        assert!(v
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::ThresholdInconsistency { .. })));
    }

    #[test]
    fn outcome_json_has_diagnostics() {
        let o = outcome(&[4.0, 5.0], &[10.0, 6.0]);
        let v: serde_json::Value = serde_json::from_str(&o.to_json().unwrap()).unwrap();
        assert_eq!(v["mechanism"], "coad");
        assert_eq!(v["winner"], 0);
        assert_eq!(v["payments"][0], 6.0);
        assert_eq!(v["assessments"][1]["reserve"], 5.0);
        assert_eq!(v["assessments"][1]["virtual_value"], 6.0);
    }
}
