//! Command-line front end. `run` parses arguments and returns the process
//! exit code. Usage errors exit with 2; runtime failures, including a failed
//! audit, exit with 1.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::audit::{run_audit, AuditConfig};
use crate::conformal::{calibrate, CalibratedPredictor, ScoredCalibration};
use crate::dataset::{
    generate_synthetic, ingest_auction_csv, load_records, save_records, split, validate_records,
    GroupCatalog, MissingHistory, PreprocessRules, SyntheticSpec,
};
use crate::error::{CoadError, Result};
use crate::experiments::{
    run_experiment, write_outputs, EstimatorConfig, ExperimentConfig, ExperimentName,
};
use crate::mechanism::{
    run_coad_with_rule, second_price, uniform_reserve_second_price, AuctionInstance, Bidder,
    QualificationRule,
};
use crate::regression::{fit, FeatureKind, FeatureMap, FittedEstimator};

#[derive(Debug, Parser)]
#[command(name = "coad", version, about = "Conformal online auctions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic historical dataset.
    Generate(GenerateArgs),
    /// Turn bid-level auction logs into historical records.
    Ingest(IngestArgs),
    /// Fit the value regression on the training half of a dataset.
    Fit(FitArgs),
    /// Calibrate group thresholds on the calibration half of a dataset.
    Calibrate(CalibrateArgs),
    /// Run one auction and print its outcome.
    Auction(AuctionArgs),
    /// Run a Monte Carlo experiment and write CSV and JSON summaries.
    Experiment(ExperimentArgs),
    /// Audit the mechanism's invariants on random instances.
    Audit(AuditArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpArg {
    Lowdim51,
    Highdim52,
}

#[derive(Debug, Args)]
pub struct DgpArgs {
    #[arg(long, value_enum, default_value = "lowdim51")]
    pub dgp: DgpArg,
    /// Bidder and item feature dimension of the high-dimensional model.
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Number of item groups of the high-dimensional model.
    #[arg(long, default_value_t = 8)]
    pub groups: usize,
    /// Seed for the high-dimensional model's coefficients and group features.
    #[arg(long, default_value_t = 0)]
    pub coefficient_seed: u64,
}

impl DgpArgs {
    fn spec(&self) -> Result<SyntheticSpec> {
        let spec = match self.dgp {
            DgpArg::Lowdim51 => SyntheticSpec::low_dim(),
            DgpArg::Highdim52 => {
                SyntheticSpec::high_dim(self.dim, self.groups, self.coefficient_seed)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Joint,
    Separate,
    Interacted,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long = "kind", value_enum)]
    pub kind: Option<KindArg>,
    /// Total degree of the joint polynomial.
    #[arg(long)]
    pub degree: Option<u32>,
    #[arg(long)]
    pub degree_x: Option<u32>,
    #[arg(long)]
    pub degree_z: Option<u32>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

impl EstimatorArgs {
    /// Flags override `default`.
    fn resolve(&self, default: EstimatorConfig) -> Result<EstimatorConfig> {
        let (joint, dx, dz) = match default.kind {
            FeatureKind::PolynomialJoint { degree } => (degree, degree, 1),
            FeatureKind::PolynomialSeparate { degree_x, degree_z }
            | FeatureKind::PolynomialInteracted { degree_x, degree_z } => {
                (degree_x, degree_x, degree_z)
            }
        };
        let kind = self.kind.unwrap_or(match default.kind {
            FeatureKind::PolynomialJoint { .. } => KindArg::Joint,
            FeatureKind::PolynomialSeparate { .. } => KindArg::Separate,
            FeatureKind::PolynomialInteracted { .. } => KindArg::Interacted,
        });
        let degree_x = self.degree_x.or(self.degree).unwrap_or(dx);
        let degree_z = self.degree_z.unwrap_or(dz);
        let kind = match kind {
            KindArg::Joint => FeatureKind::PolynomialJoint {
                degree: self.degree.unwrap_or(joint),
            },
            KindArg::Separate => FeatureKind::PolynomialSeparate { degree_x, degree_z },
            KindArg::Interacted => FeatureKind::PolynomialInteracted { degree_x, degree_z },
        };
        let valid = match kind {
            FeatureKind::PolynomialJoint { degree } => (1..=12).contains(&degree),
            FeatureKind::PolynomialSeparate { degree_x, degree_z }
            | FeatureKind::PolynomialInteracted { degree_x, degree_z } => {
                (1..=12).contains(&degree_x) && degree_z <= 8
            }
        };
        if !valid {
            return Err(CoadError::Config(
                "polynomial degrees must lie in 1..=12 (item degree at most 8)".into(),
            ));
        }
        let ridge_lambda = self.ridge.unwrap_or(default.ridge_lambda);
        if !(ridge_lambda >= 0.0) {
            return Err(CoadError::Config(format!(
                "--ridge must be nonnegative, got {ridge_lambda}"
            )));
        }
        Ok(EstimatorConfig { kind, ridge_lambda })
    }
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to COAD_SEED, then 0.
    #[arg(long, env = "COAD_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    #[arg(long)]
    pub n: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Records CSV; the group catalog goes to `<stem>.catalog.json` beside it.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MissingArg {
    PooledMean,
    Drop,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Bid-level CSV with auction_id, bidder_id, seller_id, bid_amount,
    /// bid_time_days, bidder_rating.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 6.5)]
    pub cutoff_days: f64,
    /// Comma-separated sellers to keep.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "syschannel,michael-33,saveking"
    )]
    pub sellers: Vec<String>,
    /// Keep every seller.
    #[arg(long, conflicts_with = "sellers")]
    pub all_sellers: bool,
    #[arg(long, value_enum, default_value = "pooled-mean")]
    pub missing_history: MissingArg,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Records CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Group catalog JSON; defaults to `<stem>.catalog.json` beside the data.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<(Vec<crate::dataset::HistoricalRecord>, GroupCatalog)> {
        let catalog_path = self
            .catalog
            .clone()
            .unwrap_or_else(|| catalog_path_for(&self.data));
        let catalog = GroupCatalog::load(&catalog_path)?;
        let records = load_records(&self.data)?;
        validate_records(&records, &catalog)?;
        Ok((records, catalog))
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Seed of the train/calibration split.
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Estimator JSON written by `fit`.
    #[arg(long)]
    pub estimator: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Seed of the train/calibration split; must match the one used by `fit`.
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    Coad,
    SecondPrice,
    UniformReserve,
}

#[derive(Debug, Args)]
pub struct AuctionArgs {
    /// Calibrated predictor JSON; alternatively fit one from --data.
    #[arg(long, conflicts_with = "data")]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Bidders CSV with columns x_0..x_{d-1}, bid.
    #[arg(long)]
    pub bidders: Option<PathBuf>,
    #[arg(long)]
    pub group: usize,
    #[arg(long, value_enum, default_value = "coad")]
    pub mechanism: MechanismArg,
    /// Reserve for the uniform-reserve mechanism.
    #[arg(long, default_value_t = 0.0)]
    pub reserve: f64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub name: String,
    #[command(flatten)]
    pub dgp: DgpArgs,
    /// Historical sample sizes (comma-separated for grids).
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n: Vec<usize>,
    /// Bidder counts (comma-separated for grids).
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run on one thread (same output as any thread count, but no pool).
    #[arg(long, conflicts_with = "threads")]
    pub single_thread: bool,
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectArg {
    /// Qualify only bids strictly above the lower bound.
    StrictGt,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 500)]
    pub cases: usize,
    #[arg(long)]
    pub inject: Option<InjectArg>,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

/// `data.csv` -> `data.catalog.json`.
pub fn catalog_path_for(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    data.with_file_name(format!("{stem}.catalog.json"))
}

fn usage(msg: impl Into<String>) -> CoadError {
    CoadError::Config(msg.into())
}

fn check_alpha_flag(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!(
            "--alpha must lie strictly between 0 and 1, got {alpha}"
        )))
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n")).map_err(|e| CoadError::io(path, e))
}

/// Reads `x_0..x_{d-1},bid`.
pub fn read_bidders(path: &Path, dim: usize) -> Result<Vec<Bidder>> {
    let file = std::fs::File::open(path).map_err(|e| CoadError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let expected: Vec<String> = (0..dim)
        .map(|i| format!("x_{i}"))
        .chain(["bid".into()])
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>()
    {
        return Err(CoadError::Schema(format!(
            "bidders header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CoadError::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
        out.push(Bidder {
            features: nums[..dim].to_vec(),
            bid: nums[dim],
        });
    }
    Ok(out)
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let spec = a.dgp.spec()?;
    let (records, catalog) = generate_synthetic(&spec, a.n, a.seed.seed)?;
    save_records(&records, &a.output)?;
    let cat_path = catalog_path_for(&a.output);
    catalog.save(&cat_path)?;
    writeln!(
        out,
        "wrote {} records to {} and catalog to {}",
        records.len(),
        a.output.display(),
        cat_path.display()
    )
    .ok();
    Ok(())
}

fn cmd_ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let rules = PreprocessRules {
        final_bid_cutoff_days: a.cutoff_days,
        seller_whitelist: if a.all_sellers {
            Vec::new()
        } else {
            a.sellers.clone()
        },
        missing_history: match a.missing_history {
            MissingArg::PooledMean => MissingHistory::PooledMean,
            MissingArg::Drop => MissingHistory::Drop,
        },
    };
    let (records, catalog) = ingest_auction_csv(&a.input, &rules)?;
    save_records(&records, &a.output)?;
    let cat_path = catalog_path_for(&a.output);
    catalog.save(&cat_path)?;
    writeln!(
        out,
        "wrote {} records in {} groups",
        records.len(),
        catalog.len()
    )
    .ok();
    Ok(())
}

fn default_estimator(catalog: &GroupCatalog) -> EstimatorConfig {
    if catalog.has_features() && catalog.encoding_dim() == 1 {
        EstimatorConfig {
            kind: FeatureKind::PolynomialJoint { degree: 8 },
            ridge_lambda: 0.0,
        }
    } else if catalog.has_features() {
        EstimatorConfig {
            kind: FeatureKind::PolynomialInteracted {
                degree_x: 2,
                degree_z: 1,
            },
            ridge_lambda: 1e-6,
        }
    } else {
        EstimatorConfig {
            kind: FeatureKind::PolynomialJoint { degree: 2 },
            ridge_lambda: 1e-6,
        }
    }
}

fn fit_from_data(
    records: &[crate::dataset::HistoricalRecord],
    catalog: &GroupCatalog,
    est: &EstimatorArgs,
    seed: u64,
) -> Result<FittedEstimator> {
    let cfg = est.resolve(default_estimator(catalog))?;
    let d = records.first().map_or(0, |r| r.bidder_features.len());
    let map = FeatureMap::new(cfg.kind, d, catalog.encoding_dim());
    let parts = split(records, seed)?;
    fit(&parts.train, catalog, &map, cfg.ridge_lambda)
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    a.estimator.resolve(EstimatorConfig {
        kind: FeatureKind::PolynomialJoint { degree: 8 },
        ridge_lambda: 0.0,
    })?;
    let (records, catalog) = a.data.load()?;
    let est = fit_from_data(&records, &catalog, &a.estimator, a.seed.seed)?;
    write_json(&a.output, &est.to_json()?)?;
    writeln!(
        out,
        "fitted {} coefficients on {} training records",
        est.coefficients.len(),
        est.train_size
    )
    .ok();
    Ok(())
}

fn threshold_report(pred: &CalibratedPredictor, counts: Option<&[usize]>) -> serde_json::Value {
    let groups: Vec<_> = pred
        .thresholds()
        .iter()
        .enumerate()
        .map(|(g, t)| {
            let mut v = json!({ "group": g, "threshold": t });
            if let Some(c) = counts {
                v["calibration_size"] = json!(c[g]);
            }
            v
        })
        .collect();
    json!({ "alpha": pred.alpha(), "groups": groups })
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    check_alpha_flag(a.alpha)?;
    let (records, catalog) = a.data.load()?;
    let text = std::fs::read_to_string(&a.estimator).map_err(|e| CoadError::io(&a.estimator, e))?;
    let est = FittedEstimator::from_json(&text)?;
    let parts = split(&records, a.seed.seed)?;
    let pred = calibrate(&est, &parts.calibration, a.alpha, &catalog)?;
    let counts = ScoredCalibration::new(&est, &parts.calibration, &catalog)?.group_counts();
    write_json(&a.output, &pred.to_json()?)?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&threshold_report(&pred, Some(&counts)))?
    )
    .ok();
    Ok(())
}

fn cmd_auction(a: &AuctionArgs, out: &mut dyn Write) -> Result<()> {
    check_alpha_flag(a.alpha)?;
    let bidders_path = a
        .bidders
        .as_ref()
        .ok_or_else(|| usage("--bidders <FILE> is required"))?;
    let pred = match (&a.predictor, &a.data) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| CoadError::io(p, e))?;
            CalibratedPredictor::from_json(&text)?
        }
        (None, Some(data)) => {
            let data_args = DataArgs {
                data: data.clone(),
                catalog: a.catalog.clone(),
            };
            let (records, catalog) = data_args.load()?;
            let est = fit_from_data(&records, &catalog, &a.estimator, a.seed.seed)?;
            let parts = split(&records, a.seed.seed)?;
            calibrate(&est, &parts.calibration, a.alpha, &catalog)?
        }
        (None, None) => return Err(usage("one of --predictor or --data is required")),
    };
    if a.group >= pred.catalog().len() {
        return Err(usage(format!(
            "--group {} is outside the catalog (0..{})",
            a.group,
            pred.catalog().len()
        )));
    }
    let bidders = read_bidders(bidders_path, pred.bidder_dim())?;
    let instance = AuctionInstance::new(a.group, bidders)?;
    let outcome = match a.mechanism {
        MechanismArg::Coad => {
            run_coad_with_rule(&pred, &instance, QualificationRule::AtLeastLower)?
        }
        MechanismArg::SecondPrice => second_price(&instance),
        MechanismArg::UniformReserve => uniform_reserve_second_price(&instance, a.reserve),
    };
    let report = json!({
        "outcome": outcome,
        "revenue": outcome.revenue(),
        "thresholds": threshold_report(&pred, None),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).ok();
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let name: ExperimentName = a.name.parse()?;
    check_alpha_flag(a.alpha)?;
    let spec = a.dgp.spec()?;
    let mut cfg = ExperimentConfig::new(spec);
    cfg.alpha = a.alpha;
    cfg.n_grid = a.n.clone();
    cfg.m_grid = a.m.clone();
    cfg.replications = a.reps;
    cfg.seed = a.seed.seed;
    cfg.estimator = a
        .estimator
        .resolve(EstimatorConfig::default_for(&cfg.dgp))?;
    cfg.threads = if a.single_thread { Some(1) } else { a.threads };
    cfg.validate()?;
    let record = run_experiment(name, &cfg)?;
    let (csv, summary) = write_outputs(&record, &a.out_dir)?;
    writeln!(out, "wrote {} and {}", csv.display(), summary.display()).ok();
    if record.invariant_violations > 0 {
        return Err(CoadError::Contract(format!(
            "{} replications broke revenue <= welfare or individual rationality",
            record.invariant_violations
        )));
    }
    Ok(())
}

/// Returns whether the audit was clean.
fn cmd_audit(a: &AuditArgs, out: &mut dyn Write) -> Result<bool> {
    if a.cases == 0 {
        return Err(usage("--cases must be at least 1"));
    }
    if a.grid_points < 2 {
        return Err(usage("--grid-points must be at least 2"));
    }
    let cfg = AuditConfig {
        cases: a.cases,
        seed: a.seed.seed,
        rule: match a.inject {
            Some(InjectArg::StrictGt) => QualificationRule::StrictlyAboveLower,
            None => QualificationRule::AtLeastLower,
        },
        grid_points: a.grid_points,
        ..Default::default()
    };
    let report = run_audit(&cfg)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).ok();
    writeln!(
        out,
        "{}: {} anomalies over {} cases",
        if report.is_clean() { "PASS" } else { "FAIL" },
        report.anomalies(),
        report.cases
    )
    .ok();
    Ok(report.is_clean())
}

fn is_usage(e: &CoadError) -> bool {
    matches!(e, CoadError::Config(_) | CoadError::InvalidAlpha(_))
}

/// Parses `args` and executes the command, writing reports to `out` and
/// diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                write!(out, "{rendered}").ok();
            } else {
                write!(err, "{rendered}").ok();
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a, out).map(|_| true),
        Command::Ingest(a) => cmd_ingest(a, out).map(|_| true),
        Command::Fit(a) => cmd_fit(a, out).map(|_| true),
        Command::Calibrate(a) => cmd_calibrate(a, out).map(|_| true),
        Command::Auction(a) => cmd_auction(a, out).map(|_| true),
        Command::Experiment(a) => cmd_experiment(a, out).map(|_| true),
        Command::Audit(a) => cmd_audit(a, out),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            if is_usage(&e) {
                2
            } else {
                1
            }
        }
    }
}
