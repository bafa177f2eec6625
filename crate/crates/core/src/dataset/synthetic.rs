use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GroupCatalog, HistoricalRecord, ItemGroup};
use crate::error::{CoadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dgp {
    /// Scalar bidder feature, groups {3, 5, 7}, `mu(x, z) = e^x z + 1`.
    LowDim51,
    /// Vector features, `mu(x, z) = (b1'x)^2 sin^2(b2'z) + 1`.
    HighDimQuad52,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Standard normal truncated to [-1, 1].
    TruncatedNormal,
    /// Uniform on [-1, 1].
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dgp: Dgp,
    pub bidder_dim: usize,
    pub group_dim: usize,
    pub num_groups: usize,
    pub coefficient_seed: u64,
    pub noise: NoiseKind,
}

impl SyntheticSpec {
    pub fn low_dim() -> Self {
        Self {
            dgp: Dgp::LowDim51,
            bidder_dim: 1,
            group_dim: 1,
            num_groups: 3,
            coefficient_seed: 0,
            noise: NoiseKind::TruncatedNormal,
        }
    }

    /// High-dimensional model with `dim`-dimensional bidder and item features.
    /// `high_dim(100, 30, seed)` is the full-size setting.
    pub fn high_dim(dim: usize, num_groups: usize, coefficient_seed: u64) -> Self {
        Self {
            dgp: Dgp::HighDimQuad52,
            bidder_dim: dim,
            group_dim: dim,
            num_groups,
            coefficient_seed,
            noise: NoiseKind::TruncatedNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.dgp {
            Dgp::LowDim51 => {
                if (self.bidder_dim, self.group_dim, self.num_groups) != (1, 1, 3) {
                    return Err(CoadError::Config(format!(
                        "lowdim51 requires d = 1, k = 1, q = 3; got d = {}, k = {}, q = {}",
                        self.bidder_dim, self.group_dim, self.num_groups
                    )));
                }
            }
            Dgp::HighDimQuad52 => {
                if self.bidder_dim == 0 || self.group_dim == 0 || self.num_groups == 0 {
                    return Err(CoadError::Config(
                        "highdim52 requires positive dimensions and at least one group".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A fully instantiated data-generating process: group vectors and
/// coefficients are drawn once from `coefficient_seed`.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: SyntheticSpec,
    catalog: GroupCatalog,
    beta1: Vec<f64>,
    beta2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SyntheticModel {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        match spec.dgp {
            Dgp::LowDim51 => {
                let groups = [3.0, 5.0, 7.0]
                    .iter()
                    .enumerate()
                    .map(|(id, &z)| ItemGroup {
                        id,
                        label: Some(format!("z={z}")),
                        feature_vector: Some(vec![z]),
                    })
                    .collect();
                Ok(Self {
                    spec: spec.clone(),
                    catalog: GroupCatalog::new(groups)?,
                    beta1: Vec::new(),
                    beta2: Vec::new(),
                })
            }
            Dgp::HighDimQuad52 => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.coefficient_seed);
                let groups = (0..spec.num_groups)
                    .map(|id| ItemGroup {
                        id,
                        label: None,
                        feature_vector: Some(
                            (0..spec.group_dim)
                                .map(|_| rng.sample(StandardNormal))
                                .collect(),
                        ),
                    })
                    .collect();
                let beta1 = (0..spec.bidder_dim)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect();
                let beta2 = (0..spec.group_dim)
                    .map(|_| rng.random_range(-1.0..=1.0))
                    .collect();
                Ok(Self {
                    spec: spec.clone(),
                    catalog: GroupCatalog::new(groups)?,
                    beta1,
                    beta2,
                })
            }
        }
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn catalog(&self) -> &GroupCatalog {
        &self.catalog
    }

    fn group_vector(&self, group: usize) -> &[f64] {
        self.catalog.groups()[group]
            .feature_vector
            .as_deref()
            .expect("synthetic groups always carry feature vectors")
    }

    /// The regression function `E[v | x, z]`.
    pub fn mean(&self, x: &[f64], group: usize) -> f64 {
        let z = self.group_vector(group);
        match self.spec.dgp {
            Dgp::LowDim51 => x[0].exp() * z[0] + 1.0,
            Dgp::HighDimQuad52 => {
                let a = dot(&self.beta1, x);
                let s = dot(&self.beta2, z).sin();
                a * a * s * s + 1.0
            }
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.spec.noise {
            NoiseKind::TruncatedNormal => loop {
                let e: f64 = rng.sample(StandardNormal);
                if e.abs() <= 1.0 {
                    break e;
                }
            },
            NoiseKind::Uniform => rng.random_range(-1.0..=1.0),
        }
    }

    /// Bidder features conditional on the item group.
    pub fn sample_features<R: Rng + ?Sized>(&self, group: usize, rng: &mut R) -> Vec<f64> {
        let z = self.group_vector(group);
        match self.spec.dgp {
            Dgp::LowDim51 => {
                let n = Normal::new(z[0] / 10.0, 1.0).expect("unit variance");
                vec![n.sample(rng)]
            }
            Dgp::HighDimQuad52 => {
                let centre = dot(z, z) / self.spec.group_dim as f64;
                (0..self.spec.bidder_dim)
                    .map(|_| centre + rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }

    /// A fresh bidder `(x, v)` for an auction of `group`.
    pub fn sample_bidder<R: Rng + ?Sized>(&self, group: usize, rng: &mut R) -> (Vec<f64>, f64) {
        let x = self.sample_features(group, rng);
        let v = self.mean(&x, group) + self.sample_noise(rng);
        (x, v)
    }

    pub fn sample_record<R: Rng + ?Sized>(&self, rng: &mut R) -> HistoricalRecord {
        let group = rng.random_range(0..self.catalog.len());
        let (bidder_features, value) = self.sample_bidder(group, rng);
        HistoricalRecord {
            bidder_features,
            item_group: group,
            value,
        }
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        n_records: usize,
        rng: &mut R,
    ) -> Vec<HistoricalRecord> {
        (0..n_records).map(|_| self.sample_record(rng)).collect()
    }
}

/// Draws `n_records` iid records from the process described by `spec`.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    n_records: usize,
    seed: u64,
) -> Result<(Vec<HistoricalRecord>, GroupCatalog)> {
    if n_records == 0 {
        return Err(CoadError::Config("n_records must be at least 1".into()));
    }
    let model = SyntheticModel::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((model.generate(n_records, &mut rng), model.catalog.clone()))
}
