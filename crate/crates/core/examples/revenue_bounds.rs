//! The harmonic revenue bound with a Monte Carlo estimate of h, followed by
//! the two-point example where every uniform reserve earns about 1.
//!
//! cargo run --release --example revenue_bounds

use coad::dataset::SyntheticModel;
use coad::experiments::{
    estimate_h, fit_pipeline, harmonic_number, harmonic_revenue_bound, replication_rng,
    run_two_point_baseline, EstimatorConfig, TwoPointDistribution,
};
use coad::SyntheticSpec;

fn main() -> coad::Result<()> {
    for m in [1, 2, 4, 10, 50] {
        println!(
            "m* = {m:2}: H = {:.4}, bound fraction (alpha 0.1, h 1.2) = {:.4}",
            harmonic_number(m),
            harmonic_revenue_bound(0.1, 1.2, m, 1.0)
        );
    }

    let spec = SyntheticSpec::low_dim();
    let model = SyntheticModel::new(&spec)?;
    let mut rng = replication_rng(1, 0, 0);
    let (pred, _, _) = fit_pipeline(
        &model,
        5000,
        &EstimatorConfig::default_for(&spec),
        0.1,
        &mut rng,
    )?;
    for g in 0..3 {
        let h = estimate_h(&pred, &model, g, 5000, 9)?;
        let wider = estimate_h(&pred.with_scaled_thresholds(2.0)?, &model, g, 5000, 9)?;
        println!(
            "group {g}: E[upper] {:.3}, E[lower] {:.3}, h {:?}, h with doubled S* {:?}",
            h.mean_upper, h.mean_lower, h.h, wider.h
        );
    }

    let m = 20;
    for dist in [
        TwoPointDistribution::per_auction(100.0, m),
        TwoPointDistribution::per_bidder(100.0),
    ] {
        let r = run_two_point_baseline(dist, m, 200_000, 3, None)?;
        println!(
            "p_high = {:.5}: best reserve {} earns {:.3} +- {:.3}; welfare {:.3} (2 - 1/m* = {:.3})",
            dist.p_high,
            r.best_reserve,
            r.best_revenue.mean,
            r.best_revenue.se,
            r.welfare.mean,
            2.0 - 1.0 / m as f64
        );
    }
    Ok(())
}
