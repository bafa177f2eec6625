//! Conformal online auctions. Group-conditional conformal intervals for
//! bidder values feed a threshold auction in which each bidder's lower bound
//! acts as a personal reserve. Baseline mechanisms and a Monte Carlo harness
//! sit alongside it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod cli;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod mechanism;
pub mod regression;
mod serde_float;

pub use conformal::{
    calibrate, compute_group_threshold, evaluate_coverage, predict_interval, CalibratedPredictor,
    PredictionInterval, Threshold,
};
pub use dataset::{
    generate_synthetic, split, GroupCatalog, HistoricalRecord, ItemGroup, SplitDataset,
    SyntheticSpec,
};
pub use error::{CoadError, Result};
pub use mechanism::{
    run_coad, second_price, uniform_reserve_second_price, welfare_oracle, AuctionInstance,
    AuctionOutcome, Bidder,
};
pub use regression::{fit, FeatureKind, FeatureMap, FittedEstimator};
