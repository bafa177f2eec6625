//! Group-conditional split conformal intervals.
//!
//! With conformity score `|v - mu_hat(x, z)|` and a quantile regression over
//! group-indicator functions, the augmented regression decomposes by group
//! and the dual threshold for group `g` reduces to an order statistic of that
//! group's calibration scores:
//!
//! ```text
//! k = ceil((1 - alpha) (n_g + 1)),   S*_g = S_(k)  if k <= n_g,  +inf otherwise
//! ```
//!
//! Intervals are `[mu_hat - S*_g, mu_hat + S*_g]`, shared by every bidder of
//! the same group. [`oracle`] recomputes the threshold by bisection on the
//! dual sign condition and exists to cross-check the closed form.

pub mod oracle;

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::{GroupCatalog, HistoricalRecord};
use crate::error::{CoadError, Result};
use crate::regression::FittedEstimator;

pub use oracle::dual_threshold_oracle;

/// Interval half-width; `Infinite` when a group has too few calibration points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    pub fn is_finite(self) -> bool {
        matches!(self, Threshold::Finite(_))
    }

    /// The half-width as a float, with `Infinite` mapped to `f64::INFINITY`.
    pub fn as_f64(self) -> f64 {
        match self {
            Threshold::Finite(s) => s,
            Threshold::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Threshold::Finite(s) => Some(s),
            Threshold::Infinite => None,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(s) => write!(f, "{s}"),
            Threshold::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Finite(v) => s.serialize_f64(*v),
            Threshold::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Threshold;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                if v >= 0.0 && v.is_finite() {
                    Ok(Threshold::Finite(v))
                } else {
                    Err(E::custom(format!(
                        "threshold must be finite and >= 0, got {v}"
                    )))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                if v == "inf" {
                    Ok(Threshold::Infinite)
                } else {
                    Err(E::custom(format!("unknown threshold string {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Calibration scores sorted ascending within each group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCalibration {
    scores: Vec<Vec<f64>>,
}

impl ScoredCalibration {
    pub fn new(
        est: &FittedEstimator,
        calibration: &[HistoricalRecord],
        catalog: &GroupCatalog,
    ) -> Result<Self> {
        let encodings = (0..catalog.len())
            .map(|g| catalog.encode(g))
            .collect::<Result<Vec<_>>>()?;
        let mut scores = vec![Vec::new(); catalog.len()];
        for r in calibration {
            let z = encodings
                .get(r.item_group)
                .ok_or(CoadError::UnknownGroup(r.item_group))?;
            let s = (r.value - est.predict(&r.bidder_features, z)?).abs();
            scores[r.item_group].push(s);
        }
        scores.iter_mut().for_each(|g| g.sort_by(f64::total_cmp));
        Ok(Self { scores })
    }

    pub fn group(&self, g: usize) -> &[f64] {
        &self.scores[g]
    }

    pub fn group_counts(&self) -> Vec<usize> {
        self.scores.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }
}

/// `k = ceil((1 - alpha)(n + 1))`, computed as `n + 1 - floor(alpha (n + 1))`
/// with products that land within rounding of an integer snapped to it.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let m = (n + 1) as f64;
    let t = alpha * m;
    let nearest = t.round();
    let floor_t = if (t - nearest).abs() <= 1e-9 * m.max(1.0) {
        nearest
    } else {
        t.floor()
    };
    (n + 1).saturating_sub(floor_t.max(0.0) as usize)
}

/// Closed-form group threshold from ascending, nonnegative scores.
pub fn compute_group_threshold(scores: &[f64], alpha: f64) -> Threshold {
    let k = quantile_rank(scores.len(), alpha);
    if k == 0 {
        return Threshold::Finite(0.0);
    }
    match scores.get(k - 1) {
        Some(&s) => Threshold::Finite(s),
        None => Threshold::Infinite,
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CoadError::InvalidAlpha(alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredictorRepr", into = "PredictorRepr")]
pub struct CalibratedPredictor {
    alpha: f64,
    thresholds: Vec<Threshold>,
    estimator: FittedEstimator,
    catalog: GroupCatalog,
    encodings: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PredictorRepr {
    alpha: f64,
    thresholds: BTreeMap<usize, Threshold>,
    estimator: FittedEstimator,
    catalog: GroupCatalog,
}

impl TryFrom<PredictorRepr> for CalibratedPredictor {
    type Error = CoadError;
    fn try_from(r: PredictorRepr) -> Result<Self> {
        let catalog = GroupCatalog::new(r.catalog.groups().to_vec())?;
        let mut thresholds = Vec::with_capacity(catalog.len());
        for g in 0..catalog.len() {
            thresholds.push(*r.thresholds.get(&g).ok_or_else(|| {
                CoadError::Schema(format!("predictor is missing a threshold for group {g}"))
            })?);
        }
        CalibratedPredictor::from_parts(r.estimator, catalog, r.alpha, thresholds)
    }
}

impl From<CalibratedPredictor> for PredictorRepr {
    fn from(p: CalibratedPredictor) -> Self {
        PredictorRepr {
            alpha: p.alpha,
            thresholds: p.thresholds.into_iter().enumerate().collect(),
            estimator: p.estimator,
            catalog: p.catalog,
        }
    }
}

impl CalibratedPredictor {
    /// Assembles a predictor from explicit thresholds (one per catalog group).
    pub fn from_parts(
        estimator: FittedEstimator,
        catalog: GroupCatalog,
        alpha: f64,
        thresholds: Vec<Threshold>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if thresholds.len() != catalog.len() {
            return Err(CoadError::DimensionMismatch {
                expected: catalog.len(),
                got: thresholds.len(),
                context: "thresholds per group",
            });
        }
        if let Some(bad) = thresholds
            .iter()
            .find(|t| matches!(t, Threshold::Finite(s) if !(*s >= 0.0)))
        {
            return Err(CoadError::Config(format!("negative threshold {bad}")));
        }
        if catalog.encoding_dim() != estimator.feature_map.input_dims.1 {
            return Err(CoadError::DimensionMismatch {
                expected: estimator.feature_map.input_dims.1,
                got: catalog.encoding_dim(),
                context: "catalog item encoding",
            });
        }
        let encodings = (0..catalog.len())
            .map(|g| catalog.encode(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            alpha,
            thresholds,
            estimator,
            catalog,
            encodings,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }

    pub fn threshold(&self, group: usize) -> Result<Threshold> {
        self.thresholds
            .get(group)
            .copied()
            .ok_or(CoadError::UnknownGroup(group))
    }

    pub fn estimator(&self) -> &FittedEstimator {
        &self.estimator
    }

    pub fn catalog(&self) -> &GroupCatalog {
        &self.catalog
    }

    pub fn bidder_dim(&self) -> usize {
        self.estimator.feature_map.input_dims.0
    }

    /// `mu_hat(x, z)` for a group of the catalog.
    pub fn point_prediction(&self, x: &[f64], group: usize) -> Result<f64> {
        let z = self
            .encodings
            .get(group)
            .ok_or(CoadError::UnknownGroup(group))?;
        self.estimator.predict(x, z)
    }

    /// Same predictor with thresholds replaced.
    pub fn with_thresholds(&self, thresholds: Vec<Threshold>) -> Result<Self> {
        Self::from_parts(
            self.estimator.clone(),
            self.catalog.clone(),
            self.alpha,
            thresholds,
        )
    }

    /// Same predictor with every finite threshold multiplied by `factor`.
    pub fn with_scaled_thresholds(&self, factor: f64) -> Result<Self> {
        self.with_thresholds(
            self.thresholds
                .iter()
                .map(|t| match t {
                    Threshold::Finite(s) => Threshold::Finite(s * factor),
                    Threshold::Infinite => Threshold::Infinite,
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Scores the calibration set and sets each group's threshold.
pub fn calibrate(
    est: &FittedEstimator,
    calibration: &[HistoricalRecord],
    alpha: f64,
    catalog: &GroupCatalog,
) -> Result<CalibratedPredictor> {
    check_alpha(alpha)?;
    let scored = ScoredCalibration::new(est, calibration, catalog)?;
    let thresholds = (0..catalog.len())
        .map(|g| compute_group_threshold(scored.group(g), alpha))
        .collect();
    CalibratedPredictor::from_parts(est.clone(), catalog.clone(), alpha, thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    #[serde(with = "crate::serde_float")]
    pub lower: f64,
    #[serde(with = "crate::serde_float")]
    pub upper: f64,
    pub center: f64,
    #[serde(with = "crate::serde_float")]
    pub half_width: f64,
}

impl PredictionInterval {
    pub fn new(center: f64, threshold: Threshold) -> Self {
        match threshold {
            Threshold::Finite(s) => Self {
                lower: center - s,
                upper: center + s,
                center,
                half_width: s,
            },
            Threshold::Infinite => Self {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                center,
                half_width: f64::INFINITY,
            },
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.half_width.is_finite()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

pub fn predict_interval(
    pred: &CalibratedPredictor,
    x: &[f64],
    group: usize,
) -> Result<PredictionInterval> {
    let center = pred.point_prediction(x, group)?;
    Ok(PredictionInterval::new(center, pred.threshold(group)?))
}

/// Per-group empirical coverage; `rate` is `None` for groups absent from the
/// test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCoverage {
    pub group: usize,
    pub covered: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

pub fn evaluate_coverage(
    pred: &CalibratedPredictor,
    test: &[HistoricalRecord],
) -> Result<Vec<GroupCoverage>> {
    let q = pred.catalog().len();
    let mut covered = vec![0usize; q];
    let mut total = vec![0usize; q];
    for r in test {
        let iv = predict_interval(pred, &r.bidder_features, r.item_group)?;
        total[r.item_group] += 1;
        if iv.contains(r.value) {
            covered[r.item_group] += 1;
        }
    }
    Ok((0..q)
        .map(|g| GroupCoverage {
            group: g,
            covered: covered[g],
            total: total[g],
            rate: (total[g] > 0).then(|| covered[g] as f64 / total[g] as f64),
        })
        .collect())
}
