//! Revenue against training size and bidder count, and the per-auction gap
//! to second price.
//!
//! cargo run --release --example revenue_experiments

use coad::experiments::{
    run_gap_experiment, run_revenue_vs_m, run_revenue_vs_n, ExperimentConfig, Summary,
};
use coad::SyntheticSpec;

fn main() -> coad::Result<()> {
    let mut cfg = ExperimentConfig::new(SyntheticSpec::low_dim());
    cfg.m_grid = vec![50];
    cfg.n_grid = vec![100, 500, 1000, 2500];
    cfg.replications = 40;
    cfg.seed = 2;

    if let Summary::RevenueVsN(s) = run_revenue_vs_n(&cfg)?.summary {
        println!("     N    COAD   second   welfare");
        for p in &s.points {
            println!(
                "{:6} {:7.2} {:8.2} {:9.2}",
                p.at, p.coad.mean, p.second_price.mean, p.welfare.mean
            );
        }
    }

    cfg.n_grid = vec![1000];
    cfg.m_grid = vec![1, 5, 10, 25, 50];
    if let Summary::RevenueVsM(s) = run_revenue_vs_m(&cfg)?.summary {
        println!("    m*    COAD   second   welfare");
        for p in &s.points {
            println!(
                "{:6} {:7.2} {:8.2} {:9.2}",
                p.at, p.coad.mean, p.second_price.mean, p.welfare.mean
            );
        }
        println!(
            "coupled prefixes: {} violations in {} comparisons",
            s.monotonicity_violations, s.prefix_pairs_checked
        );
    }

    cfg.m_grid = vec![50];
    cfg.replications = 100;
    if let Summary::Gap(s) = run_gap_experiment(&cfg)?.summary {
        for g in &s.groups {
            println!(
                "group {}: gap > 0 in {:.0}%, = 0 in {:.0}%, < 0 in {:.0}%; median {:.2}",
                g.group,
                100.0 * g.fraction_positive,
                100.0 * g.fraction_zero,
                100.0 * g.fraction_negative,
                g.median_gap
            );
        }
    }
    Ok(())
}
