//! Ingestion of bid-level online auction logs.
//!
//! Input columns: `auction_id, bidder_id, seller_id, bid_amount,
//! bid_time_days, bidder_rating`. Each bidder's highest bid in an auction is
//! taken as their value; late final bids and non-whitelisted sellers are
//! dropped. Emitted features are `(bid_time, rating, mean of the bidder's bids
//! in other auctions)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroupCatalog, HistoricalRecord, ItemGroup};
use crate::error::{CoadError, Result};

const COLUMNS: [&str; 6] = [
    "auction_id",
    "bidder_id",
    "seller_id",
    "bid_amount",
    "bid_time_days",
    "bidder_rating",
];

/// What to do with a bidder that has no bids outside the current auction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingHistory {
    /// Use the mean of all bids placed in other auctions.
    PooledMean,
    /// Drop the record.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRules {
    /// Final bids placed after this many days are excluded.
    pub final_bid_cutoff_days: f64,
    /// Sellers kept; an empty list keeps every seller.
    pub seller_whitelist: Vec<String>,
    pub missing_history: MissingHistory,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self {
            final_bid_cutoff_days: 6.5,
            seller_whitelist: vec!["syschannel".into(), "michael-33".into(), "saveking".into()],
            missing_history: MissingHistory::PooledMean,
        }
    }
}

struct BidRow {
    auction: String,
    bidder: String,
    seller: String,
    amount: f64,
    time: f64,
    rating: f64,
}

pub fn ingest_auction_csv(
    path: &Path,
    rules: &PreprocessRules,
) -> Result<(Vec<HistoricalRecord>, GroupCatalog)> {
    let f = File::open(path).map_err(|e| CoadError::io(path, e))?;
    ingest_auction_reader(f, rules)
}

pub fn ingest_auction_reader<R: Read>(
    input: R,
    rules: &PreprocessRules,
) -> Result<(Vec<HistoricalRecord>, GroupCatalog)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CoadError::Schema(format!("missing column {name:?}")))?;
    }

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let num = |col: usize| -> Result<f64> {
            let raw = rec.get(idx[col]).unwrap_or("");
            raw.parse::<f64>().map_err(|_| CoadError::Parse {
                row,
                message: format!("column {} is not numeric: {raw:?}", COLUMNS[col]),
            })
        };
        let text = |col: usize| rec.get(idx[col]).unwrap_or("").to_string();
        rows.push(BidRow {
            auction: text(0),
            bidder: text(1),
            seller: text(2),
            amount: num(3)?,
            time: num(4)?,
            rating: num(5)?,
        });
    }

    // Highest bid per (auction, bidder), in order of first appearance.
    let mut final_bid: Vec<usize> = Vec::new();
    let mut slot_of: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, r) in rows.iter().enumerate() {
        match slot_of.get(&(r.auction.as_str(), r.bidder.as_str())) {
            Some(&s) => {
                if r.amount > rows[final_bid[s]].amount {
                    final_bid[s] = i;
                }
            }
            None => {
                slot_of.insert((&r.auction, &r.bidder), final_bid.len());
                final_bid.push(i);
            }
        }
    }

    // Per-bidder bid totals by auction, for leave-current-auction-out means.
    let mut per_bidder: HashMap<&str, HashMap<&str, (f64, usize)>> = HashMap::new();
    let (mut pooled_sum, mut pooled_n) = (0.0, 0usize);
    for r in &rows {
        let e = per_bidder
            .entry(&r.bidder)
            .or_default()
            .entry(&r.auction)
            .or_insert((0.0, 0));
        e.0 += r.amount;
        e.1 += 1;
        pooled_sum += r.amount;
        pooled_n += 1;
    }

    let allowed = |seller: &str| {
        rules.seller_whitelist.is_empty() || rules.seller_whitelist.iter().any(|s| s == seller)
    };

    let mut groups: Vec<ItemGroup> = Vec::new();
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for &i in &final_bid {
        let r = &rows[i];
        if r.time > rules.final_bid_cutoff_days || !allowed(&r.seller) {
            continue;
        }
        let (mut sum, mut n) = (0.0, 0usize);
        for (auction, (s, c)) in &per_bidder[r.bidder.as_str()] {
            if *auction != r.auction.as_str() {
                sum += s;
                n += c;
            }
        }
        let history = if n > 0 {
            sum / n as f64
        } else {
            match rules.missing_history {
                MissingHistory::Drop => continue,
                MissingHistory::PooledMean => {
                    let own = per_bidder[r.bidder.as_str()][r.auction.as_str()];
                    let rest = pooled_n - own.1;
                    if rest == 0 {
                        continue;
                    }
                    (pooled_sum - own.0) / rest as f64
                }
            }
        };
        let group = *group_of.entry(&r.seller).or_insert_with(|| {
            groups.push(ItemGroup {
                id: groups.len(),
                label: Some(r.seller.clone()),
                feature_vector: None,
            });
            groups.len() - 1
        });
        if r.amount < 0.0 {
            return Err(CoadError::Parse {
                row: i + 1,
                message: format!("negative bid amount {}", r.amount),
            });
        }
        out.push(HistoricalRecord {
            bidder_features: vec![r.time, r.rating, history],
            item_group: group,
            value: r.amount,
        });
    }

    if out.is_empty() {
        return Err(CoadError::EmptyDataset(
            "no bids survive the cutoff and seller filters".into(),
        ));
    }
    Ok((out, GroupCatalog::new(groups)?))
}
