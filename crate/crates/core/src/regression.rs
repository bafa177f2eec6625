//! Polynomial least-squares estimator for the value regression `mu(x, z)`.
//!
//! Features are monomials over the concatenated `(x, z)` vector, with an
//! intercept first and terms in graded lexicographic order. For degree two or
//! more the non-intercept columns are standardized on the training design, and
//! the same affine map is applied at prediction time. Coefficients solve
//!
//! ```text
//! min_b  sum_i (v_i - phi_i' b)^2 + lambda |b|^2
//! ```
//!
//! through a Householder QR of the design followed by a one-sided Jacobi SVD
//! of `R` (QR alone when `lambda > 0`). Singular
//! values below `max(n, p) * eps * s_max` are discarded, so a rank-deficient
//! design with `lambda = 0` yields the minimum-norm solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupCatalog, HistoricalRecord};
use crate::error::{CoadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// All monomials of total degree `<= degree` over `(x, z)` jointly.
    PolynomialJoint { degree: u32 },
    /// Monomials in `x` up to `degree_x` plus monomials in `z` up to
    /// `degree_z`, without cross terms.
    PolynomialSeparate { degree_x: u32, degree_z: u32 },
    /// Products of a monomial in `x` up to `degree_x` with a monomial in `z`
    /// up to `degree_z`, constants included on both sides.
    PolynomialInteracted { degree_x: u32, degree_z: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// `(d, k)`: bidder and item feature dimensions.
    pub input_dims: (usize, usize),
    pub output_dim: usize,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of monomials of total degree in `1..=degree` over `vars` variables.
fn nonconstant_monomials(vars: usize, degree: u32) -> usize {
    if vars == 0 {
        return 0;
    }
    binomial(vars as u64 + degree as u64, degree as u64) as usize - 1
}

/// Appends every monomial of degree `1..=degree` in `vars` to `out`.
fn push_monomials(vars: &[f64], degree: u32, out: &mut Vec<f64>) {
    // (index of last factor, value) for the previous degree
    let mut frontier: Vec<(usize, f64)> = vec![(0, 1.0)];
    for _ in 0..degree {
        let mut next = Vec::with_capacity(frontier.len() * vars.len());
        for &(last, value) in &frontier {
            for (j, &v) in vars.iter().enumerate().skip(last) {
                next.push((j, value * v));
            }
        }
        out.extend(next.iter().map(|&(_, v)| v));
        frontier = next;
    }
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, bidder_dim: usize, group_dim: usize) -> Self {
        let output_dim = 1 + match kind {
            FeatureKind::PolynomialJoint { degree } => {
                nonconstant_monomials(bidder_dim + group_dim, degree)
            }
            FeatureKind::PolynomialSeparate { degree_x, degree_z } => {
                nonconstant_monomials(bidder_dim, degree_x)
                    + nonconstant_monomials(group_dim, degree_z)
            }
            FeatureKind::PolynomialInteracted { degree_x, degree_z } => {
                (nonconstant_monomials(bidder_dim, degree_x) + 1)
                    * (nonconstant_monomials(group_dim, degree_z) + 1)
                    - 1
            }
        };
        Self {
            kind,
            input_dims: (bidder_dim, group_dim),
            output_dim,
        }
    }

    pub fn joint(degree: u32, bidder_dim: usize, group_dim: usize) -> Self {
        Self::new(
            FeatureKind::PolynomialJoint { degree },
            bidder_dim,
            group_dim,
        )
    }

    pub fn max_degree(&self) -> u32 {
        match self.kind {
            FeatureKind::PolynomialJoint { degree } => degree,
            FeatureKind::PolynomialSeparate { degree_x, degree_z } => degree_x.max(degree_z),
            FeatureKind::PolynomialInteracted { degree_x, degree_z } => degree_x + degree_z,
        }
    }

    fn check_dims(&self, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.input_dims.0 {
            return Err(CoadError::DimensionMismatch {
                expected: self.input_dims.0,
                got: x.len(),
                context: "bidder features",
            });
        }
        if z.len() != self.input_dims.1 {
            return Err(CoadError::DimensionMismatch {
                expected: self.input_dims.1,
                got: z.len(),
                context: "item features",
            });
        }
        Ok(())
    }

    fn expand_into(&self, x: &[f64], z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        match self.kind {
            FeatureKind::PolynomialJoint { degree } => {
                let joint: Vec<f64> = x.iter().chain(z).copied().collect();
                push_monomials(&joint, degree, out);
            }
            FeatureKind::PolynomialSeparate { degree_x, degree_z } => {
                push_monomials(x, degree_x, out);
                push_monomials(z, degree_z, out);
            }
            FeatureKind::PolynomialInteracted { degree_x, degree_z } => {
                let mut px = vec![1.0];
                push_monomials(x, degree_x, &mut px);
                let mut pz = vec![1.0];
                push_monomials(z, degree_z, &mut pz);
                for (i, a) in pz.iter().enumerate() {
                    for (j, b) in px.iter().enumerate() {
                        if i + j > 0 {
                            out.push(a * b);
                        }
                    }
                }
            }
        }
        debug_assert_eq!(out.len(), self.output_dim);
    }
}

/// Raw (unstandardized) feature vector `phi(x, z)`.
pub fn build_features(map: &FeatureMap, x: &[f64], z_feature: &[f64]) -> Result<Vec<f64>> {
    map.check_dims(x, z_feature)?;
    let mut out = Vec::with_capacity(map.output_dim);
    map.expand_into(x, z_feature, &mut out);
    Ok(out)
}

/// Per-column affine map applied to every feature but the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    fn from_design(rows: &[Vec<f64>]) -> Self {
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) || !s.is_finite() {
                *s = 1.0;
            }
        }
        mean[0] = 0.0;
        scale[0] = 1.0;
        Self { mean, scale }
    }

    fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale).skip(1) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimator {
    pub feature_map: FeatureMap,
    /// Coefficients on the (possibly standardized) features.
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    pub train_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl FittedEstimator {
    /// Estimator whose predictions are identically zero.
    pub fn zero(feature_map: FeatureMap) -> Self {
        Self {
            coefficients: vec![0.0; feature_map.output_dim],
            feature_map,
            ridge_lambda: 0.0,
            train_size: 0,
            standardization: None,
        }
    }

    /// Prediction at `(x, z)`.
    pub fn predict(&self, x: &[f64], z_feature: &[f64]) -> Result<f64> {
        self.feature_map.check_dims(x, z_feature)?;
        let mut phi = Vec::with_capacity(self.feature_map.output_dim);
        self.feature_map.expand_into(x, z_feature, &mut phi);
        if let Some(st) = &self.standardization {
            st.apply(&mut phi);
        }
        Ok(phi.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    /// Copy with every prediction multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.coefficients.iter_mut().for_each(|c| *c *= factor);
        out
    }

    /// Copy with `shift` added to the intercept (and so to every prediction).
    pub fn shifted(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.coefficients[0] += shift;
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: FittedEstimator = serde_json::from_str(text)?;
        if est.coefficients.len() != est.feature_map.output_dim {
            return Err(CoadError::DimensionMismatch {
                expected: est.feature_map.output_dim,
                got: est.coefficients.len(),
                context: "estimator coefficients",
            });
        }
        Ok(est)
    }
}

pub fn predict(est: &FittedEstimator, x: &[f64], z_feature: &[f64]) -> Result<f64> {
    est.predict(x, z_feature)
}

/// Least-squares (or ridge) fit of `map` on `train`.
pub fn fit(
    train: &[HistoricalRecord],
    catalog: &GroupCatalog,
    map: &FeatureMap,
    ridge_lambda: f64,
) -> Result<FittedEstimator> {
    if train.is_empty() {
        return Err(CoadError::TooFewRecords { needed: 1, got: 0 });
    }
    if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
        return Err(CoadError::Config(format!(
            "ridge lambda must be finite and nonnegative, got {ridge_lambda}"
        )));
    }
    if catalog.encoding_dim() != map.input_dims.1 {
        return Err(CoadError::DimensionMismatch {
            expected: map.input_dims.1,
            got: catalog.encoding_dim(),
            context: "catalog item encoding",
        });
    }
    let encodings = (0..catalog.len())
        .map(|g| catalog.encode(g))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(train.len());
    for r in train {
        let z = encodings
            .get(r.item_group)
            .ok_or(CoadError::UnknownGroup(r.item_group))?;
        rows.push(build_features(map, &r.bidder_features, z)?);
    }
    let standardization = (map.max_degree() >= 2).then(|| Standardization::from_design(&rows));
    if let Some(st) = &standardization {
        rows.iter_mut().for_each(|r| st.apply(r));
    }

    let n = rows.len();
    let p = map.output_dim;
    let design = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let target = DVector::from_iterator(n, train.iter().map(|r| r.value));
    let coefficients = solve_least_squares(design, target, ridge_lambda);

    Ok(FittedEstimator {
        feature_map: map.clone(),
        coefficients: coefficients.iter().copied().collect(),
        ridge_lambda,
        train_size: n,
        standardization,
    })
}

/// Ridge solves the augmented system `[X; sqrt(lambda) I] beta = [y; 0]` by
/// QR. Without ridge, QR then a Jacobi SVD of `R` gives the minimum-norm
/// solution.
fn solve_least_squares(design: DMatrix<f64>, target: DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, p) = design.shape();
    if lambda > 0.0 {
        let root = lambda.sqrt();
        let aug = DMatrix::from_fn(n + p, p, |i, j| {
            if i < n {
                design[(i, j)]
            } else if i - n == j {
                root
            } else {
                0.0
            }
        });
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&target);
        let qr = aug.qr();
        qr.q_tr_mul(&mut rhs);
        let r = qr.r();
        return r
            .solve_upper_triangular(&rhs.rows(0, p).into_owned())
            .expect("ridge system has a nonsingular triangle");
    }
    let (a, c) = if n > p {
        let qr = design.qr();
        let mut qtb = target;
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, p).into_owned())
    } else {
        (design, target)
    };
    min_norm_solve(a, &c, n.max(p))
}

/// Minimum-norm solution of `a x = c` from a one-sided Jacobi SVD of `a`.
/// Singular values below `scale eps s_max` are treated as zero.
fn min_norm_solve(mut a: DMatrix<f64>, c: &DVector<f64>, scale: usize) -> DVector<f64> {
    let p = a.ncols();
    let mut v = DMatrix::<f64>::identity(p, p);
    for _sweep in 0..80 {
        let mut rotated = false;
        for j in 0..p {
            for k in j + 1..p {
                let alpha = a.column(j).norm_squared();
                let beta = a.column(k).norm_squared();
                let gamma = a.column(j).dot(&a.column(k));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(&mut a, j, k, cs, sn);
                rotate(&mut v, j, k, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    // Columns of `a` are now `u_i s_i`.
    let sigma: Vec<f64> = (0..p).map(|i| a.column(i).norm()).collect();
    let s_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = s_max * scale as f64 * f64::EPSILON;
    let mut x = DVector::zeros(p);
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff {
            x += v.column(i) * (a.column(i).dot(c) / (s * s));
        }
    }
    x
}

fn rotate(m: &mut DMatrix<f64>, j: usize, k: usize, cs: f64, sn: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, j)], m[(r, k)]);
        m[(r, j)] = cs * x - sn * y;
        m[(r, k)] = sn * x + cs * y;
    }
}
