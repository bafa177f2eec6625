//! Draw a synthetic history and round-trip it through CSV after splitting.
//!
//! cargo run --example generate_data

use coad::dataset::{read_records_csv, split, write_records_csv};
use coad::{generate_synthetic, SyntheticSpec};

fn main() -> coad::Result<()> {
    let (records, catalog) = generate_synthetic(&SyntheticSpec::low_dim(), 1000, 7)?;
    println!(
        "{} records over {} item groups",
        records.len(),
        catalog.len()
    );
    for g in catalog.groups() {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.item_group == g.id)
            .map(|r| r.value)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        println!(
            "  group {} ({}): {} records, mean value {:.2}",
            g.id,
            g.label.as_deref().unwrap_or("-"),
            vals.len(),
            mean
        );
    }

    let parts = split(&records, 1)?;
    println!(
        "train {} / calibration {}",
        parts.train.len(),
        parts.calibration.len()
    );

    let mut buf = Vec::new();
    write_records_csv(&records[..3], &mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    assert_eq!(read_records_csv(buf.as_slice())?, records[..3].to_vec());

    let wide = SyntheticSpec::high_dim(10, 8, 3);
    let (hd, hd_catalog) = generate_synthetic(&wide, 500, 7)?;
    println!(
        "high-dimensional: {} records, x in R^{}, {} groups with z in R^{}",
        hd.len(),
        hd[0].bidder_features.len(),
        hd_catalog.len(),
        hd_catalog.encoding_dim()
    );
    Ok(())
}
