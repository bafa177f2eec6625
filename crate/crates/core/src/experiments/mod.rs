//! Monte Carlo harness: seeded replications of the whole data-to-auction
//! pipeline with per-replication CSV rows and JSON summaries.
//!
//! Replication `r` draws from its own ChaCha stream derived from the base
//! seed, so results do not depend on thread count or scheduling; rows are
//! merged in replication order.

mod bounds;
mod output;
mod runs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, CalibratedPredictor};
use crate::dataset::{split, SyntheticModel, SyntheticSpec};
use crate::error::{CoadError, Result};
use crate::regression::{fit, FeatureKind, FeatureMap, FittedEstimator};

pub use bounds::{
    estimate_h, harmonic_number, harmonic_revenue_bound, run_two_point_baseline, HEstimate,
    TwoPointDistribution, TwoPointReport,
};
pub use output::{git_describe, write_outputs, CSV_HEADER};
pub use runs::{
    run_coverage_experiment, run_estimator_consistency, run_gap_experiment, run_revenue_vs_m,
    run_revenue_vs_n, verify_bound, BoundGroup, BoundSummary, ConsistencyPoint, ConsistencySummary,
    CoverageGroup, CoverageSummary, GapGroup, GapSummary, RevenuePoint, RevenueVsMSummary,
    RevenueVsNSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: FeatureKind,
    pub ridge_lambda: f64,
}

impl EstimatorConfig {
    /// Degree-8 joint polynomial without ridge for the scalar model. For the
    /// vector model, a quadratic in `x` whose coefficients are affine in `z`,
    /// with a small ridge safeguard.
    pub fn default_for(spec: &SyntheticSpec) -> Self {
        match spec.dgp {
            crate::dataset::Dgp::LowDim51 => Self {
                kind: FeatureKind::PolynomialJoint { degree: 8 },
                ridge_lambda: 0.0,
            },
            crate::dataset::Dgp::HighDimQuad52 => Self {
                kind: FeatureKind::PolynomialInteracted {
                    degree_x: 2,
                    degree_z: 1,
                },
                ridge_lambda: 1e-6,
            },
        }
    }

    pub fn feature_map(&self, spec: &SyntheticSpec) -> FeatureMap {
        FeatureMap::new(self.kind, spec.bidder_dim, spec.group_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: SyntheticSpec,
    pub alpha: f64,
    /// Historical sample sizes `N`; single-size experiments use the first.
    pub n_grid: Vec<usize>,
    /// Bidder counts `m*`; single-size experiments use the first.
    pub m_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    /// Worker threads; `Some(1)` runs on the calling thread.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(dgp: SyntheticSpec) -> Self {
        let estimator = EstimatorConfig::default_for(&dgp);
        Self {
            dgp,
            alpha: 0.1,
            n_grid: vec![1000],
            m_grid: vec![50],
            replications: 100,
            seed: 0,
            estimator,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::conformal::check_alpha(self.alpha)?;
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(CoadError::Config("replications must be at least 1".into()));
        }
        if self.n_grid.is_empty() || self.m_grid.is_empty() {
            return Err(CoadError::Config("N and m* grids must be nonempty".into()));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(CoadError::Config("every N must be at least 2".into()));
        }
        if self.m_grid.contains(&0) {
            return Err(CoadError::Config("every m* must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CoadError::Config("threads must be at least 1".into()));
        }
        if !(self.estimator.ridge_lambda >= 0.0) {
            return Err(CoadError::Config("ridge lambda must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_grid[0]
    }

    pub fn m(&self) -> usize {
        self.m_grid[0]
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for replication `rep`, sub-task `task`.
pub fn replication_rng(seed: u64, rep: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(task)));
    rng.set_stream(rep);
    rng
}

/// Runs `f(rep)` for every replication and returns results in order.
pub(crate) fn run_replications<T, F>(reps: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    match threads {
        Some(1) => (0..reps as u64).map(&f).collect(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CoadError::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..reps as u64).into_par_iter().map(&f).collect())
        }
        None => (0..reps as u64).into_par_iter().map(&f).collect(),
    }
}

/// Draws `n` records and returns the calibrated predictor together with its
/// estimator and calibration split.
pub fn fit_pipeline(
    model: &SyntheticModel,
    n: usize,
    estimator: &EstimatorConfig,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(
    CalibratedPredictor,
    FittedEstimator,
    Vec<crate::dataset::HistoricalRecord>,
)> {
    use rand::Rng;
    let records = model.generate(n, rng);
    let parts = split(&records, rng.random())?;
    let map = estimator.feature_map(model.spec());
    let est = fit(&parts.train, model.catalog(), &map, estimator.ridge_lambda)?;
    let pred = calibrate(&est, &parts.calibration, alpha, model.catalog())?;
    Ok((pred, est, parts.calibration))
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, count: n }
    }
}

/// One CSV row: one replication of one group (and grid point).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ReplicationRow {
    pub replication: u64,
    pub group: usize,
    pub n: usize,
    pub m: usize,
    pub coverage: Option<f64>,
    pub threshold: Option<String>,
    pub coad_revenue: Option<f64>,
    pub second_price_revenue: Option<f64>,
    pub welfare: Option<f64>,
    pub h_hat: Option<f64>,
    pub bound_value: Option<f64>,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Coverage,
    RevenueVsN,
    RevenueVsM,
    Gap,
    Bound,
    Consistency,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Coverage => "coverage",
            ExperimentName::RevenueVsN => "revenue_vs_n",
            ExperimentName::RevenueVsM => "revenue_vs_m",
            ExperimentName::Gap => "gap",
            ExperimentName::Bound => "bound",
            ExperimentName::Consistency => "consistency",
        }
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = CoadError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "coverage" => ExperimentName::Coverage,
            "revenue_vs_n" => ExperimentName::RevenueVsN,
            "revenue_vs_m" => ExperimentName::RevenueVsM,
            "gap" => ExperimentName::Gap,
            "bound" => ExperimentName::Bound,
            "consistency" => ExperimentName::Consistency,
            other => {
                return Err(CoadError::Config(format!(
                    "unknown experiment {other:?}; expected coverage, revenue_vs_n, revenue_vs_m, gap, bound or consistency"
                )))
            }
        })
    }
}

/// Aggregated result of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Summary {
    Coverage(CoverageSummary),
    RevenueVsN(RevenueVsNSummary),
    RevenueVsM(RevenueVsMSummary),
    Gap(GapSummary),
    Bound(BoundSummary),
    Consistency(ConsistencySummary),
}

/// Per-replication rows plus the aggregate summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub experiment: ExperimentName,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub rows: Vec<ReplicationRow>,
    pub summary: Summary,
    /// Replications breaking revenue <= welfare or individual rationality.
    pub invariant_violations: usize,
}

/// Dispatches by name.
pub fn run_experiment(name: ExperimentName, cfg: &ExperimentConfig) -> Result<MetricsRecord> {
    match name {
        ExperimentName::Coverage => run_coverage_experiment(cfg),
        ExperimentName::RevenueVsN => run_revenue_vs_n(cfg),
        ExperimentName::RevenueVsM => run_revenue_vs_m(cfg),
        ExperimentName::Gap => run_gap_experiment(cfg),
        ExperimentName::Bound => verify_bound(cfg),
        ExperimentName::Consistency => run_estimator_consistency(cfg),
    }
}
