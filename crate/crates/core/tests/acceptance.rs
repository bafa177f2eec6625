//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use coad::audit::{run_audit, AuditConfig};
use coad::conformal::{calibrate, compute_group_threshold, dual_threshold_oracle, Threshold};
use coad::dataset::{GroupCatalog, HistoricalRecord, SyntheticSpec};
use coad::experiments::{
    run_coverage_experiment, run_estimator_consistency, run_gap_experiment, run_revenue_vs_m,
    run_two_point_baseline, verify_bound, EstimatorConfig, ExperimentConfig, ReplicationRow,
    Summary, TwoPointDistribution,
};
use coad::mechanism::{coad_outcome, QualificationRule};
use coad::regression::{FeatureKind, FeatureMap, FittedEstimator};
use coad::PredictionInterval;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn check(&mut self, id: &'static str, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("PASS {id} {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                println!("FAIL {id} {name}: {msg} [{secs:.1}s]");
                self.failed.push(id);
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn se(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}

fn rows_of(
    rows: &[ReplicationRow],
    g: usize,
    f: impl Fn(&ReplicationRow) -> Option<f64>,
) -> Vec<f64> {
    rows.iter().filter(|r| r.group == g).filter_map(f).collect()
}

fn low_dim(n: usize, m: usize, reps: usize, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(SyntheticSpec::low_dim());
    cfg.n_grid = vec![n];
    cfg.m_grid = vec![m];
    cfg.replications = reps;
    cfg.seed = seed;
    cfg.threads = Some(1);
    cfg
}

fn conditional_coverage() -> Outcome {
    let cfg = low_dim(1000, 1000, 200, 11);
    let start = Instant::now();
    let rec = run_coverage_experiment(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let q = cfg.dgp.num_groups;
    let per: Vec<f64> = (0..q)
        .map(|g| mean(&rows_of(&rec.rows, g, |r| r.coverage)))
        .collect();
    let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let msg = format!("per-group coverage in [{lo:.4}, {hi:.4}], runtime {secs:.1}s");
    if lo >= 0.88 && hi <= 0.93 && secs < 120.0 {
        Ok(msg)
    } else {
        Err(msg + " (need [0.88, 0.93] and < 120s)")
    }
}

fn coad_vs_second_price() -> Outcome {
    let cfg = low_dim(1000, 50, 500, 12);
    let rec = run_gap_experiment(&cfg).map_err(|e| e.to_string())?;
    let mut worst_nonneg = 1.0f64;
    let mut worst_pos = 1.0f64;
    for g in 0..cfg.dgp.num_groups {
        let gaps = rows_of(&rec.rows, g, |r| {
            Some(r.coad_revenue? - r.second_price_revenue?)
        });
        let n = gaps.len() as f64;
        worst_nonneg = worst_nonneg.min(gaps.iter().filter(|&&d| d >= 0.0).count() as f64 / n);
        worst_pos = worst_pos.min(gaps.iter().filter(|&&d| d > 0.0).count() as f64 / n);
    }
    let msg = format!(
        "min per-group fraction COAD >= SP {worst_nonneg:.3}, min strict-positive {worst_pos:.3}, invariant violations {}",
        rec.invariant_violations
    );
    if worst_nonneg >= 0.75 && worst_pos >= 0.5 && rec.invariant_violations == 0 {
        Ok(msg)
    } else {
        Err(msg + " (need >= 0.75 and >= 0.5)")
    }
}

fn revenue_monotone_in_m() -> Outcome {
    let mut cfg = low_dim(1000, 50, 1000, 13);
    cfg.m_grid = (1..=50).collect();
    let rec = run_revenue_vs_m(&cfg).map_err(|e| e.to_string())?;
    let Summary::RevenueVsM(s) = &rec.summary else {
        return Err("unexpected summary".into());
    };
    // Recount from the rows: each replication's revenues over the coupled
    // prefixes must never decrease.
    let mut pairs = 0usize;
    let mut drops = 0usize;
    for rep in 0..cfg.replications as u64 {
        for g in 0..cfg.dgp.num_groups {
            let mut path: Vec<(usize, f64)> = rec
                .rows
                .iter()
                .filter(|r| r.replication == rep && r.group == g)
                .map(|r| (r.m, r.coad_revenue.unwrap()))
                .collect();
            path.sort_by_key(|p| p.0);
            for w in path.windows(2) {
                pairs += 1;
                if w[1].1 < w[0].1 {
                    drops += 1;
                }
            }
        }
    }
    let msg = format!(
        "{drops} decreases over {pairs} prefix pairs (harness reports {} over {})",
        s.monotonicity_violations, s.prefix_pairs_checked
    );
    if drops == 0 && s.monotonicity_violations == 0 && pairs > 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ic_ir_audit() -> Outcome {
    let cfg = AuditConfig {
        cases: 500,
        grid_points: 101,
        seed: 14,
        ..Default::default()
    };
    let clean = run_audit(&cfg).map_err(|e| e.to_string())?;
    let mutated = run_audit(&AuditConfig {
        rule: QualificationRule::StrictlyAboveLower,
        ..cfg
    })
    .map_err(|e| e.to_string())?;
    let msg = format!(
        "{} bidders: {} profitable deviations, {} negative utilities; strict-gt mutation: {} anomalies",
        clean.bidders_checked,
        clean.profitable_deviations,
        clean.negative_utilities,
        mutated.anomalies()
    );
    if clean.profitable_deviations == 0
        && clean.negative_utilities == 0
        && clean.is_clean()
        && mutated.anomalies() >= 1
    {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dual_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    let mut infinite = 0;
    let mut mismatches = 0;
    for _ in 0..100 {
        let alpha = *[0.05, 0.1, 0.3, 0.5].choose(&mut rng).unwrap();
        let n = rng.random_range(0..=20);
        let ties = rng.random_bool(0.3);
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                if ties {
                    rng.random_range(0..=5) as f64 * 0.25
                } else {
                    rng.random_range(0.0..5.0)
                }
            })
            .collect();
        let bisect = dual_threshold_oracle(&scores, alpha, 1e-12);
        scores.sort_by(f64::total_cmp);
        match (compute_group_threshold(&scores, alpha), bisect) {
            (Threshold::Infinite, Threshold::Infinite) => infinite += 1,
            (Threshold::Finite(a), Threshold::Finite(b)) if (a - b).abs() <= 1e-9 => {
                worst = worst.max((a - b).abs())
            }
            _ => mismatches += 1,
        }
    }
    let msg = format!("{mismatches} mismatches, {infinite} both infinite, max |diff| {worst:.2e}");
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn coverage_bounds() -> Outcome {
    let cfg = low_dim(1000, 1000, 500, 16);
    let rec = run_coverage_experiment(&cfg).map_err(|e| e.to_string())?;
    let Summary::Coverage(s) = &rec.summary else {
        return Err("unexpected summary".into());
    };
    let q = cfg.dgp.num_groups as f64;
    let target = 1.0 - cfg.alpha;
    let mut bad = Vec::new();
    for g in &s.groups {
        let cov = rows_of(&rec.rows, g.group, |r| r.coverage);
        let (m, e) = (mean(&cov), se(&cov));
        let lower = target - 3.0 * e;
        let upper = target + q / (g.mean_calibration_size + 1.0) + 3.0 * e;
        if !(lower <= m && m <= upper) || !g.within_bounds {
            bad.push(format!(
                "group {} mean {m:.4} not in [{lower:.4}, {upper:.4}]",
                g.group
            ));
        }
    }
    if bad.is_empty() {
        let means: Vec<String> = s
            .groups
            .iter()
            .map(|g| format!("{:.4}", g.coverage.mean))
            .collect();
        Ok(format!(
            "all {} groups within bounds, means [{}]",
            s.groups.len(),
            means.join(", ")
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn estimator_consistency() -> Outcome {
    let mut cfg = low_dim(1000, 1, 100, 17);
    cfg.n_grid = vec![1000, 5000];
    let rec = run_estimator_consistency(&cfg).map_err(|e| e.to_string())?;
    let mse_at = |n: usize| {
        let v: Vec<f64> = rec
            .rows
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.mse)
            .collect();
        mean(&v)
    };
    let (a, b) = (mse_at(1000), mse_at(5000));
    let msg = format!("mean MSE {a:.3} at N=1000, {b:.4} at N=5000");
    if a <= 10.0 && b <= 0.5 {
        Ok(msg)
    } else {
        Err(msg + " (need <= 10 and <= 0.5)")
    }
}

fn revenue_bound() -> Outcome {
    let cfg = low_dim(5000, 1, 2000, 18);
    let rec = verify_bound(&cfg).map_err(|e| e.to_string())?;
    let mut worst_margin = f64::INFINITY;
    let mut bad = Vec::new();
    for g in 0..cfg.dgp.num_groups {
        let rev = rows_of(&rec.rows, g, |r| r.coad_revenue);
        let wel = rows_of(&rec.rows, g, |r| r.welfare);
        let hs = rows_of(&rec.rows, g, |r| r.h_hat);
        if hs.is_empty() {
            bad.push(format!("group {g}: h undefined"));
            continue;
        }
        let (h, w) = (mean(&hs), mean(&wel));
        let factor = 2.0 * (1.0 - cfg.alpha) / (1.0 + h);
        let bound = factor * w;
        let combined = (se(&rev).powi(2)
            + (factor * se(&wel)).powi(2)
            + (bound / (1.0 + h) * se(&hs)).powi(2))
        .sqrt();
        let margin = (mean(&rev) - (bound - 3.0 * combined)) / bound;
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            bad.push(format!(
                "group {g}: revenue {:.4} < bound {bound:.4} - 3se",
                mean(&rev)
            ));
        }
    }
    if bad.is_empty() {
        Ok(format!(
            "bound holds in all groups, smallest relative slack {worst_margin:.3}"
        ))
    } else {
        Err(bad.join("; "))
    }
}

fn two_point_baseline() -> Outcome {
    let (h, m) = (100.0, 20);
    let target_w = 2.0 - 1.0 / m as f64;
    let r = run_two_point_baseline(
        TwoPointDistribution::per_auction(h, m),
        m,
        200_000,
        19,
        Some(1),
    )
    .map_err(|e| e.to_string())?;
    let single =
        run_two_point_baseline(TwoPointDistribution::per_bidder(h), 1, 200_000, 19, Some(1))
            .map_err(|e| e.to_string())?;
    let literal =
        run_two_point_baseline(TwoPointDistribution::per_bidder(h), m, 20_000, 19, Some(1))
            .map_err(|e| e.to_string())?;
    let ok_main = (r.best_revenue.mean - 1.0).abs() <= 0.05
        && (r.welfare.mean - target_w).abs() <= 0.05 * target_w;
    let w1 = 2.0 - 1.0 / h;
    let ok_single = (single.best_revenue.mean - 1.0).abs() <= 0.05
        && (single.welfare.mean - w1).abs() <= 0.05 * w1;
    let msg = format!(
        "p=1/(mH), m={m}: best reserve {} revenue {:.4}, welfare {:.4} (target {target_w:.3}); \
         p=1/H, m=1: revenue {:.4}, welfare {:.4}; p=1/H, m={m} (informational): revenue {:.2}, welfare {:.2}",
        r.best_reserve, r.best_revenue.mean, r.welfare.mean,
        single.best_revenue.mean, single.welfare.mean,
        literal.best_revenue.mean, literal.welfare.mean
    );
    if ok_main && ok_single {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn high_dim_suite() -> Outcome {
    let spec = SyntheticSpec::high_dim(10, 8, 7);
    let mut cfg = ExperimentConfig::new(spec.clone());
    cfg.n_grid = vec![4000];
    cfg.m_grid = vec![1000];
    cfg.replications = 100;
    cfg.seed = 20;
    cfg.threads = Some(1);
    let cov = run_coverage_experiment(&cfg).map_err(|e| e.to_string())?;
    let per: Vec<f64> = (0..8)
        .map(|g| mean(&rows_of(&cov.rows, g, |r| r.coverage)))
        .collect();
    let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    cfg.m_grid = vec![50];
    let gap = run_gap_experiment(&cfg).map_err(|e| e.to_string())?;
    let coad = mean(
        &gap.rows
            .iter()
            .filter_map(|r| r.coad_revenue)
            .collect::<Vec<_>>(),
    );
    let sp = mean(
        &gap.rows
            .iter()
            .filter_map(|r| r.second_price_revenue)
            .collect::<Vec<_>>(),
    );

    cfg.replications = 50;
    cfg.estimator = EstimatorConfig {
        kind: FeatureKind::PolynomialJoint { degree: 2 },
        ridge_lambda: 1e-6,
    };
    let joint = run_gap_experiment(&cfg).map_err(|e| e.to_string())?;
    let jc = mean(
        &joint
            .rows
            .iter()
            .filter_map(|r| r.coad_revenue)
            .collect::<Vec<_>>(),
    );
    let js = mean(
        &joint
            .rows
            .iter()
            .filter_map(|r| r.second_price_revenue)
            .collect::<Vec<_>>(),
    );

    let msg = format!(
        "coverage in [{lo:.4}, {hi:.4}], mean COAD {coad:.3} vs SP {sp:.3}; \
         joint quadratic (informational): COAD {jc:.3} vs SP {js:.3}"
    );
    if lo >= 0.86 && hi <= 0.94 && coad >= sp && gap.invariant_violations == 0 {
        Ok(msg)
    } else {
        Err(msg + " (need coverage in [0.86, 0.94] and COAD >= SP)")
    }
}

fn scale(iv: &PredictionInterval, lambda: f64) -> PredictionInterval {
    PredictionInterval::new(
        iv.center * lambda,
        Threshold::Finite(iv.half_width * lambda),
    )
}

fn invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut hom_fail = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=8);
        let ivs: Vec<PredictionInterval> = (0..m)
            .map(|_| {
                PredictionInterval::new(
                    rng.random_range(-2.0..10.0),
                    Threshold::Finite(rng.random_range(0.0..4.0)),
                )
            })
            .collect();
        let bids: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..12.0)).collect();
        let lambda = rng.random_range(0.1..10.0);
        let base = coad_outcome(&ivs, &bids, QualificationRule::AtLeastLower);
        let s_ivs: Vec<_> = ivs.iter().map(|iv| scale(iv, lambda)).collect();
        let s_bids: Vec<_> = bids.iter().map(|b| b * lambda).collect();
        let scaled = coad_outcome(&s_ivs, &s_bids, QualificationRule::AtLeastLower);
        let payments_ok = base.payments.iter().zip(&scaled.payments).all(|(p, s)| {
            let want = p * lambda;
            (want - s).abs() <= 1e-9 * want.abs().max(s.abs()).max(f64::MIN_POSITIVE)
        });
        if base.winner != scaled.winner || !payments_ok {
            hom_fail += 1;
        }
    }

    let catalog = GroupCatalog::anonymous(3).map_err(|e| e.to_string())?;
    let map = FeatureMap::joint(1, 1, catalog.encoding_dim());
    let mut trans_fail = 0;
    for _ in 0..200 {
        let alpha = rng.random_range(0.05..0.5);
        let intercept = rng.random_range(-40i32..=40) as f64 / 8.0;
        let shift = rng.random_range(-1024i32..=1024) as f64 / 16.0;
        let n = rng.random_range(1..=40);
        let cal: Vec<HistoricalRecord> = (0..n)
            .map(|_| HistoricalRecord {
                bidder_features: vec![0.0],
                item_group: rng.random_range(0..3),
                value: rng.random_range(0u32..=4096) as f64 / 128.0,
            })
            .collect();
        let moved: Vec<HistoricalRecord> = cal
            .iter()
            .map(|r| HistoricalRecord {
                value: r.value + shift,
                ..r.clone()
            })
            .collect();
        let est = FittedEstimator::zero(map.clone()).shifted(intercept);
        let a = calibrate(&est, &cal, alpha, &catalog).map_err(|e| e.to_string())?;
        let b =
            calibrate(&est.shifted(shift), &moved, alpha, &catalog).map_err(|e| e.to_string())?;
        if a.thresholds() != b.thresholds() {
            trans_fail += 1;
        }
    }
    let msg = format!("homogeneity failures {hom_fail}/200, translation failures {trans_fail}/200");
    if hom_fail == 0 && trans_fail == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut report = Report { failed: Vec::new() };
    let criteria: [Criterion; 11] = [
        ("C01", "conditional coverage", conditional_coverage),
        ("C02", "COAD vs second price", coad_vs_second_price),
        ("C03", "revenue monotone in bidders", revenue_monotone_in_m),
        ("C04", "IC/IR audit", ic_ir_audit),
        ("C05", "dual oracle equivalence", dual_oracle_equivalence),
        ("C06", "coverage bounds", coverage_bounds),
        ("C07", "estimator consistency", estimator_consistency),
        ("C08", "single-bidder revenue bound", revenue_bound),
        ("C09", "two-point reserve baseline", two_point_baseline),
        ("C10", "reduced high-dimensional suite", high_dim_suite),
        ("C11", "homogeneity and translation", invariants),
    ];
    for (id, name, f) in criteria {
        if filter.is_empty()
            || filter
                .iter()
                .any(|p| id.contains(p.as_str()) || name.contains(p.as_str()))
        {
            report.check(id, name, f);
        }
    }
    if report.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", report.failed.join(", "));
        std::process::exit(1);
    }
}
