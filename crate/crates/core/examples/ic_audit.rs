//! Audit the mechanism's invariants on random instances, then rerun with the
//! qualification boundary made strict to show that the audit notices.
//!
//! cargo run --release --example ic_audit

use coad::audit::{run_audit, AuditConfig};
use coad::mechanism::QualificationRule;

fn main() -> coad::Result<()> {
    let mut cfg = AuditConfig {
        cases: 200,
        seed: 4,
        ..Default::default()
    };
    let clean = run_audit(&cfg)?;
    println!(
        "{} cases, {} bidders: {} deviations, {} negative utilities, {} threshold anomalies",
        clean.cases,
        clean.bidders_checked,
        clean.profitable_deviations,
        clean.negative_utilities,
        clean.threshold_inconsistencies
    );
    println!(
        "prefix pairs {} (violations {}), oracle sets {} (max diff {:e})",
        clean.prefix_pairs,
        clean.monotonicity_violations,
        clean.oracle_sets,
        clean.oracle_max_abs_diff
    );

    cfg.rule = QualificationRule::StrictlyAboveLower;
    let broken = run_audit(&cfg)?;
    println!("strict boundary: {} anomalies", broken.anomalies());
    if let Some(first) = broken.examples.first() {
        println!("{}", serde_json::to_string_pretty(first)?);
    }
    Ok(())
}
