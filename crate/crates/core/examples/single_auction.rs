//! One conformal auction next to second price, on a worked instance and on
//! bidders drawn from the synthetic model.
//!
//! cargo run --release --example single_auction

use coad::conformal::Threshold;
use coad::dataset::{split, SyntheticModel};
use coad::mechanism::{coad_outcome, second_price_bids, QualificationRule};
use coad::{
    calibrate, fit, run_coad, second_price, welfare_oracle, AuctionInstance, Bidder, FeatureMap,
    PredictionInterval, SyntheticSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coad::Result<()> {
    // Bids 10 and 4 with lower bounds 6 and 5: bidder 0 wins and pays 6.
    let intervals = [
        PredictionInterval::new(7.0, Threshold::Finite(1.0)),
        PredictionInterval::new(6.0, Threshold::Finite(1.0)),
    ];
    let bids = [10.0, 4.0];
    let out = coad_outcome(&intervals, &bids, QualificationRule::AtLeastLower);
    println!(
        "worked instance: winner {:?}, payments {:?}",
        out.winner, out.payments
    );
    println!(
        "second price would charge {}",
        second_price_bids(&bids).revenue()
    );

    let model = SyntheticModel::new(&SyntheticSpec::low_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records = model.generate(1000, &mut rng);
    let parts = split(&records, 8)?;
    let est = fit(
        &parts.train,
        model.catalog(),
        &FeatureMap::joint(8, 1, 1),
        0.0,
    )?;
    let pred = calibrate(&est, &parts.calibration, 0.1, model.catalog())?;

    let group = 2;
    let bidders = (0..10)
        .map(|_| {
            let (x, v) = model.sample_bidder(group, &mut rng);
            Bidder {
                features: x,
                bid: v,
            }
        })
        .collect();
    let instance = AuctionInstance::new(group, bidders)?;
    let coad = run_coad(&pred, &instance)?;
    for (i, a) in coad.assessments.iter().enumerate() {
        println!(
            "  bidder {i}: bid {:7.2}  lower {:7.2}  virtual {:7.2}",
            instance.bidders[i].bid, a.interval.lower, a.virtual_value
        );
    }
    println!(
        "COAD revenue {:.2}, second price {:.2}, welfare {:.2}",
        coad.revenue(),
        second_price(&instance).revenue(),
        welfare_oracle(&instance)
    );
    println!(
        "{}",
        coad.to_json()?
            .lines()
            .take(12)
            .collect::<Vec<_>>()
            .join("\n")
    );
    Ok(())
}
