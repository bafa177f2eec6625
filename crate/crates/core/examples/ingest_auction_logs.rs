//! Preprocess bid-level auction logs into historical records and run an
//! auction on the result.
//!
//! cargo run --example ingest_auction_logs

use coad::dataset::{ingest_auction_reader, split, PreprocessRules};
use coad::{calibrate, fit, run_coad, AuctionInstance, Bidder, FeatureMap};

const LOG: &str = "\
auction_id,bidder_id,seller_id,bid_amount,bid_time_days,bidder_rating
a1,ann,syschannel,150,1.2,12
a1,bob,syschannel,180,3.9,40
a1,ann,syschannel,200,6.1,12
a2,bob,saveking,210,2.5,40
a2,cy,saveking,190,4.0,3
a2,dee,saveking,230,6.9,88
a3,ann,michael-33,170,0.8,12
a3,cy,michael-33,160,5.2,3
a4,dee,otherseller,500,1.0,88
a5,bob,syschannel,205,2.2,40
a5,cy,syschannel,175,3.1,3
a6,ann,saveking,195,5.5,12
a6,dee,saveking,240,6.0,88
";

fn main() -> coad::Result<()> {
    let (records, catalog) = ingest_auction_reader(LOG.as_bytes(), &PreprocessRules::default())?;
    println!("{} records, groups:", records.len());
    for g in catalog.groups() {
        println!("  {} -> {}", g.id, g.label.as_deref().unwrap_or("-"));
    }
    for r in &records {
        println!(
            "  group {} value {:6.1} features (time {:.1}, rating {:.0}, history {:.1})",
            r.item_group, r.value, r.bidder_features[0], r.bidder_features[1], r.bidder_features[2]
        );
    }

    let parts = split(&records, 0)?;
    let map = FeatureMap::joint(1, 3, catalog.encoding_dim());
    let est = fit(&parts.train, &catalog, &map, 1e-3)?;
    let pred = calibrate(&est, &parts.calibration, 0.3, &catalog)?;
    let instance = AuctionInstance::new(
        0,
        vec![
            Bidder {
                features: vec![2.0, 20.0, 190.0],
                bid: 210.0,
            },
            Bidder {
                features: vec![4.0, 5.0, 170.0],
                bid: 185.0,
            },
        ],
    )?;
    let out = run_coad(&pred, &instance)?;
    println!(
        "winner {:?} pays {:.2}; unbounded intervals: {}",
        out.winner,
        out.revenue(),
        out.any_unbounded_interval()
    );
    Ok(())
}
