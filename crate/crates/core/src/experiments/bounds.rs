use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{replication_rng, run_replications, Stat};
use crate::conformal::{predict_interval, CalibratedPredictor};
use crate::dataset::SyntheticModel;
use crate::error::{CoadError, Result};
use crate::mechanism::uniform_reserve_bids;

/// `H_m = 1 + 1/2 + ... + 1/m`.
pub fn harmonic_number(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Revenue lower bound `2(1 - alpha) W / ((1 + h) H_m)`.
pub fn harmonic_revenue_bound(alpha: f64, h: f64, m: usize, welfare: f64) -> f64 {
    2.0 * (1.0 - alpha) * welfare / ((1.0 + h) * harmonic_number(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HEstimate {
    pub mean_upper: f64,
    pub mean_lower: f64,
    /// `None` when the mean lower bound is not positive or the group's
    /// threshold is infinite.
    pub h: Option<f64>,
}

/// Monte Carlo estimate of `E[upper] / E[lower]` over fresh bidders of
/// `group`.
pub fn estimate_h(
    pred: &CalibratedPredictor,
    model: &SyntheticModel,
    group: usize,
    n_draws: usize,
    seed: u64,
) -> Result<HEstimate> {
    if n_draws == 0 {
        return Err(CoadError::Config("n_draws must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut up, mut lo) = (0.0, 0.0);
    for _ in 0..n_draws {
        let x = model.sample_features(group, &mut rng);
        let iv = predict_interval(pred, &x, group)?;
        up += iv.upper;
        lo += iv.lower;
    }
    let (mean_upper, mean_lower) = (up / n_draws as f64, lo / n_draws as f64);
    let h = (mean_lower > 0.0 && mean_upper.is_finite()).then(|| mean_upper / mean_lower);
    Ok(HEstimate {
        mean_upper,
        mean_lower,
        h,
    })
}

/// Values equal `high` with probability `p_high` and 1 otherwise, independently
/// per bidder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPointDistribution {
    pub high: f64,
    pub p_high: f64,
}

impl TwoPointDistribution {
    /// High value with probability `1/H`.
    pub fn per_bidder(high: f64) -> Self {
        Self {
            high,
            p_high: 1.0 / high,
        }
    }

    /// High value with probability `1/(m H)`, so that the chance of at least
    /// one high bidder among `m` stays near `1/H`.
    pub fn per_auction(high: f64, m: usize) -> Self {
        Self {
            high,
            p_high: 1.0 / (m as f64 * high),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.p_high {
            self.high
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoPointReport {
    pub distribution: TwoPointDistribution,
    pub bidders: usize,
    pub reserves: Vec<f64>,
    pub revenue_by_reserve: Vec<Stat>,
    pub best_reserve: f64,
    pub best_revenue: Stat,
    pub welfare: Stat,
}

/// Second price with the best uniform reserve from `{1, H}` on the two-point
/// distribution, against expected welfare.
pub fn run_two_point_baseline(
    dist: TwoPointDistribution,
    m: usize,
    auctions: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<TwoPointReport> {
    if m == 0 || auctions == 0 {
        return Err(CoadError::Config(
            "need at least one bidder and one auction".into(),
        ));
    }
    if !(0.0..=1.0).contains(&dist.p_high) || !(dist.high >= 1.0) {
        return Err(CoadError::Config(
            "two-point distribution needs H >= 1 and p in [0, 1]".into(),
        ));
    }
    let reserves = vec![1.0, dist.high];
    let draws = run_replications(auctions, threads, |rep| {
        let mut rng = replication_rng(seed, rep, 0);
        let bids: Vec<f64> = (0..m).map(|_| dist.sample(&mut rng)).collect();
        let revs: Vec<f64> = reserves
            .iter()
            .map(|&r| uniform_reserve_bids(&bids, r).revenue())
            .collect();
        let welfare = bids.iter().copied().fold(0.0, f64::max);
        Ok((revs, welfare))
    })?;
    let revenue_by_reserve: Vec<Stat> = (0..reserves.len())
        .map(|k| Stat::of(&draws.iter().map(|d| d.0[k]).collect::<Vec<_>>()))
        .collect();
    let best = (0..reserves.len())
        .max_by(|&a, &b| {
            revenue_by_reserve[a]
                .mean
                .total_cmp(&revenue_by_reserve[b].mean)
        })
        .expect("two reserves");
    Ok(TwoPointReport {
        distribution: dist,
        bidders: m,
        best_reserve: reserves[best],
        best_revenue: revenue_by_reserve[best],
        reserves,
        revenue_by_reserve,
        welfare: Stat::of(&draws.iter().map(|d| d.1).collect::<Vec<_>>()),
    })
}
