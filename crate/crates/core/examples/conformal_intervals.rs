//! Calibrate group-conditional intervals and check their coverage on fresh
//! bidders.
//!
//! cargo run --release --example conformal_intervals

use coad::conformal::oracle::dual_threshold_oracle;
use coad::conformal::ScoredCalibration;
use coad::dataset::{split, SyntheticModel};
use coad::{calibrate, evaluate_coverage, fit, predict_interval, FeatureMap, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coad::Result<()> {
    let model = SyntheticModel::new(&SyntheticSpec::low_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records = model.generate(1000, &mut rng);
    let parts = split(&records, 4)?;
    let est = fit(
        &parts.train,
        model.catalog(),
        &FeatureMap::joint(8, 1, 1),
        0.0,
    )?;

    for alpha in [0.1, 0.3] {
        let pred = calibrate(&est, &parts.calibration, alpha, model.catalog())?;
        let scored = ScoredCalibration::new(&est, &parts.calibration, model.catalog())?;
        println!("alpha = {alpha}");
        for g in 0..model.catalog().len() {
            let oracle = dual_threshold_oracle(scored.group(g), alpha, 1e-12);
            println!(
                "  group {g}: n_g = {:3}, S* = {} (bisection {})",
                scored.group(g).len(),
                pred.threshold(g)?,
                oracle
            );
        }
        let test = model.generate(30_000, &mut rng);
        for c in evaluate_coverage(&pred, &test)? {
            println!(
                "  group {}: coverage {:.3} over {}",
                c.group,
                c.rate.unwrap_or(f64::NAN),
                c.total
            );
        }
    }

    let pred = calibrate(&est, &parts.calibration, 0.1, model.catalog())?;
    let iv = predict_interval(&pred, &[0.5], 1)?;
    println!(
        "bidder x=0.5 in group z=5: [{:.2}, {:.2}]",
        iv.lower, iv.upper
    );
    Ok(())
}
