//! Historical auction records grouped by item, with the train/calibration
//! split. Synthetic generators and log ingestion live in the submodules.

mod ingest;
mod synthetic;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoadError, Result};

pub use ingest::{ingest_auction_csv, ingest_auction_reader, MissingHistory, PreprocessRules};
pub use synthetic::{generate_synthetic, Dgp, NoiseKind, SyntheticModel, SyntheticSpec};

/// One element of the finite item-feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemGroup {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_vector: Option<Vec<f64>>,
}

/// The set of item groups, indexed densely by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCatalog {
    groups: Vec<ItemGroup>,
}

impl GroupCatalog {
    /// Builds a catalog, checking that ids are exactly `0..q` in order and
    /// that feature vectors (when present) share one dimension.
    pub fn new(groups: Vec<ItemGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(CoadError::Config("group catalog is empty".into()));
        }
        for (pos, g) in groups.iter().enumerate() {
            if g.id != pos {
                return Err(CoadError::Config(format!(
                    "group ids must be 0..q in order; position {pos} holds id {}",
                    g.id
                )));
            }
        }
        let with_features = groups.iter().filter(|g| g.feature_vector.is_some()).count();
        if with_features != 0 && with_features != groups.len() {
            return Err(CoadError::Config(
                "either every group carries a feature vector or none does".into(),
            ));
        }
        if let Some(k) = groups[0].feature_vector.as_ref().map(Vec::len) {
            for g in &groups {
                let got = g.feature_vector.as_ref().map_or(0, Vec::len);
                if got != k {
                    return Err(CoadError::DimensionMismatch {
                        expected: k,
                        got,
                        context: "group feature vector",
                    });
                }
            }
        }
        Ok(Self { groups })
    }

    /// Catalog of `q` unlabelled groups without feature vectors.
    pub fn anonymous(q: usize) -> Result<Self> {
        Self::new(
            (0..q)
                .map(|id| ItemGroup {
                    id,
                    label: None,
                    feature_vector: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[ItemGroup] {
        &self.groups
    }

    pub fn get(&self, id: usize) -> Result<&ItemGroup> {
        self.groups.get(id).ok_or(CoadError::UnknownGroup(id))
    }

    /// Whether groups carry real feature vectors (otherwise one-hot is used).
    pub fn has_features(&self) -> bool {
        self.groups[0].feature_vector.is_some()
    }

    /// Dimension of the vector fed to estimators for the item side.
    pub fn encoding_dim(&self) -> usize {
        match &self.groups[0].feature_vector {
            Some(v) => v.len(),
            None => self.groups.len(),
        }
    }

    /// The item-side feature vector: the group's own vector, or a one-hot
    /// encoding of its id when the catalog has no vectors.
    pub fn encode(&self, id: usize) -> Result<Vec<f64>> {
        let g = self.get(id)?;
        Ok(match &g.feature_vector {
            Some(v) => v.clone(),
            None => {
                let mut one_hot = vec![0.0; self.groups.len()];
                one_hot[id] = 1.0;
                one_hot
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GroupCatalog = serde_json::from_str(text)?;
        Self::new(raw.groups)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| CoadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoadError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One historical observation `(x, z, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub bidder_features: Vec<f64>,
    pub item_group: usize,
    pub value: f64,
}

/// Disjoint training and calibration halves of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<HistoricalRecord>,
    pub calibration: Vec<HistoricalRecord>,
    pub seed: u64,
}

/// Uniformly random partition into `floor(N/2)` training records and
/// `ceil(N/2)` calibration records.
pub fn split(records: &[HistoricalRecord], seed: u64) -> Result<SplitDataset> {
    if records.len() < 2 {
        return Err(CoadError::TooFewRecords {
            needed: 2,
            got: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = records.len() / 2;
    let train = order[..n_train]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let calibration = order[n_train..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok(SplitDataset {
        train,
        calibration,
        seed,
    })
}

/// Checks the fixed-dimension and nonnegative-value invariants, returning `d`.
pub fn validate_records(records: &[HistoricalRecord], catalog: &GroupCatalog) -> Result<usize> {
    let d = records.first().map_or(0, |r| r.bidder_features.len());
    for (row, r) in records.iter().enumerate() {
        if r.bidder_features.len() != d {
            return Err(CoadError::DimensionMismatch {
                expected: d,
                got: r.bidder_features.len(),
                context: "bidder features",
            });
        }
        if !(r.value >= 0.0) || !r.value.is_finite() {
            return Err(CoadError::Parse {
                row: row + 1,
                message: format!("value must be finite and nonnegative, got {}", r.value),
            });
        }
        catalog.get(r.item_group)?;
    }
    Ok(d)
}

/// Writes records as CSV with header `x_0,..,x_{d-1},group_id,value`.
pub fn write_records_csv<W: Write>(records: &[HistoricalRecord], out: W) -> Result<()> {
    let d = records.first().map_or(0, |r| r.bidder_features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.push("group_id".into());
    header.push("value".into());
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.bidder_features.iter().map(|v| v.to_string()).collect();
        row.push(r.item_group.to_string());
        row.push(r.value.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CoadError::io("<csv writer>", e))?;
    Ok(())
}

/// Reads the format produced by [`write_records_csv`].
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<HistoricalRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let n = cols.len();
    if n < 2 || cols[n - 2] != "group_id" || cols[n - 1] != "value" {
        return Err(CoadError::Schema(
            "records CSV must end with columns group_id,value".into(),
        ));
    }
    for (j, c) in cols[..n - 2].iter().enumerate() {
        if *c != format!("x_{j}") {
            return Err(CoadError::Schema(format!(
                "expected column x_{j}, found {c:?}"
            )));
        }
    }
    let d = n - 2;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |j: usize| -> Result<f64> {
            row[j].trim().parse::<f64>().map_err(|e| CoadError::Parse {
                row: i + 1,
                message: format!("column {}: {e}", cols[j]),
            })
        };
        let bidder_features = (0..d).map(num).collect::<Result<Vec<_>>>()?;
        let item_group = row[d]
            .trim()
            .parse::<usize>()
            .map_err(|e| CoadError::Parse {
                row: i + 1,
                message: format!("column group_id: {e}"),
            })?;
        out.push(HistoricalRecord {
            bidder_features,
            item_group,
            value: num(d + 1)?,
        });
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<HistoricalRecord>> {
    let f = File::open(path).map_err(|e| CoadError::io(path, e))?;
    read_records_csv(f)
}

pub fn save_records(records: &[HistoricalRecord], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| CoadError::io(path, e))?;
    write_records_csv(records, f)
}
