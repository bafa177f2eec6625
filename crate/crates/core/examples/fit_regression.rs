//! Fit the degree-8 polynomial value model and compare it with the true
//! regression function.
//!
//! cargo run --release --example fit_regression

use coad::dataset::{split, SyntheticModel};
use coad::{fit, FeatureKind, FeatureMap, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> coad::Result<()> {
    let spec = SyntheticSpec::low_dim();
    let model = SyntheticModel::new(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    for n in [1000, 5000] {
        let records = model.generate(n, &mut rng);
        let parts = split(&records, 9)?;
        for kind in [
            FeatureKind::PolynomialJoint { degree: 8 },
            FeatureKind::PolynomialSeparate {
                degree_x: 8,
                degree_z: 1,
            },
        ] {
            let map = FeatureMap::new(kind, 1, 1);
            let est = fit(&parts.train, model.catalog(), &map, 0.0)?;
            let mut sq = 0.0;
            for r in &parts.calibration {
                let z = model.catalog().encode(r.item_group)?;
                let e = est.predict(&r.bidder_features, &z)?
                    - model.mean(&r.bidder_features, r.item_group);
                sq += e * e;
            }
            println!(
                "N={n:5} {:?}: {} features, held-out MSE vs truth {:.4}",
                kind,
                map.output_dim,
                sq / parts.calibration.len() as f64
            );
        }
    }

    let records = model.generate(5000, &mut rng);
    let parts = split(&records, 2)?;
    let est = fit(
        &parts.train,
        model.catalog(),
        &FeatureMap::joint(8, 1, 1),
        0.0,
    )?;
    println!(
        "mu_hat(0, z=3) = {:.3} (true 4)",
        est.predict(&[0.0], &[3.0])?
    );
    Ok(())
}
