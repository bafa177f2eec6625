//! Conditional coverage over repeated recalibrations, written to CSV and JSON.
//!
//! cargo run --release --example coverage_experiment -- [out_dir]

use coad::experiments::{run_coverage_experiment, write_outputs, ExperimentConfig, Summary};
use coad::SyntheticSpec;

fn main() -> coad::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "results".into());
    let mut cfg = ExperimentConfig::new(SyntheticSpec::low_dim());
    cfg.n_grid = vec![1000];
    cfg.m_grid = vec![1000];
    cfg.replications = 50;
    cfg.seed = 1;

    let record = run_coverage_experiment(&cfg)?;
    if let Summary::Coverage(s) = &record.summary {
        for g in &s.groups {
            println!(
                "group {} ({}): coverage {:.4} +- {:.4}, bounds [{:.4}, {:.4}]",
                g.group,
                g.label.as_deref().unwrap_or("-"),
                g.coverage.mean,
                g.coverage.se,
                g.lower_bound,
                g.upper_bound
            );
        }
    }
    let (csv, json) = write_outputs(&record, std::path::Path::new(&out_dir))?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}
