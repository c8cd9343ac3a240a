//! Per-county least-squares summaries of simulation outcomes.
//!
//! A county's replicates are regressed on `[1, n, b]` (or `[1, n, b, n*b]`),
//! and the coefficient vector with its sampling covariance becomes one noisy
//! training row for each coefficient's Gaussian process.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Observation, TreatmentCondition};
use crate::error::{Error, Result};
use crate::stats::sample_variance;

/// Smallest noise variance handed to the GP.
pub const NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `z = mu_0 + mu_n n + mu_b b`
    #[default]
    #[serde(alias = "main")]
    MainEffects,
    /// Adds `mu_nb n b`.
    Interaction,
}

impl ModelKind {
    pub fn num_coefficients(self) -> usize {
        match self {
            ModelKind::MainEffects => 3,
            ModelKind::Interaction => 4,
        }
    }

    pub fn coefficient_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::MainEffects => &["mu_0", "mu_n", "mu_b"],
            ModelKind::Interaction => &["mu_0", "mu_n", "mu_b", "mu_nb"],
        }
    }

    /// Regressor row `a` such that the response is `a . beta`.
    pub fn design_row(self, c: TreatmentCondition) -> Vec<f64> {
        let (n, b) = (c.n as f64, c.b as f64);
        match self {
            ModelKind::MainEffects => vec![1.0, n, b],
            ModelKind::Interaction => vec![1.0, n, b, n * b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub county_id: String,
    pub model_kind: ModelKind,
    pub beta: Vec<f64>,
    /// Row-major symmetric covariance of `beta`.
    pub cov: Vec<Vec<f64>>,
    pub replicates_total: usize,
    pub distinct_conditions: usize,
}

impl CoefficientEstimate {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let p = self.beta.len();
        DMatrix::from_fn(p, p, |i, j| self.cov[i][j])
    }

    pub fn predict(&self, condition: TreatmentCondition) -> ResponsePrediction {
        predict_response(self.model_kind, &self.beta, Some(&self.cov), condition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePrediction {
    pub mean: f64,
    pub variance: Option<f64>,
}

/// Explains which direction of the design is missing.
fn diagnose_rank(kind: ModelKind, conditions: &[TreatmentCondition]) -> Error {
    let distinct = |f: fn(&TreatmentCondition) -> u32| {
        let mut v: Vec<u32> = conditions.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let msg = if distinct(|c| c.n) < 2 && distinct(|c| c.b) < 2 {
        "no variation in n or b".to_owned()
    } else if distinct(|c| c.n) < 2 {
        "no variation in n".to_owned()
    } else if distinct(|c| c.b) < 2 {
        "no variation in b".to_owned()
    } else if kind == ModelKind::Interaction && conditions.iter().all(|c| c.n * c.b == 0) {
        "no condition with n*b != 0".to_owned()
    } else {
        format!(
            "the {} observed conditions cannot identify {} coefficients (collinear design)",
            conditions.len(),
            kind.num_coefficients()
        )
    };
    Error::RankDeficient(msg)
}

/// Ordinary least squares of one county's outcomes on the response-function
/// regressors.
///
/// The covariance is `s^2 (X'X)^-1` with `s^2` the residual mean square. When
/// there are no residual degrees of freedom, `s^2` falls back to the pooled
/// within-condition replicate variance, or to the outcome sample variance if
/// no condition was replicated.
pub fn fit_response(observations: &[Observation], kind: ModelKind) -> Result<CoefficientEstimate> {
    let first = observations.first().ok_or_else(|| Error::invalid("no observations to fit"))?;
    if let Some(o) = observations.iter().find(|o| o.county_id != first.county_id) {
        return Err(Error::invalid(format!(
            "observations mix counties `{}` and `{}`",
            first.county_id, o.county_id
        )));
    }
    let p = kind.num_coefficients();
    let rows = observations.len();

    let mut by_condition: BTreeMap<TreatmentCondition, Vec<f64>> = BTreeMap::new();
    for o in observations {
        if !o.outcome.is_finite() {
            return Err(Error::invalid("non-finite outcome"));
        }
        by_condition.entry(o.condition).or_default().push(o.outcome);
    }
    let conditions: Vec<TreatmentCondition> = by_condition.keys().copied().collect();
    if conditions.len() < p {
        return Err(diagnose_rank(kind, &conditions));
    }

    let x = DMatrix::from_fn(rows, p, |i, j| kind.design_row(observations[i].condition)[j]);
    let y = DVector::from_iterator(rows, observations.iter().map(|o| o.outcome));
    let xtx = x.transpose() * &x;
    // Scale-aware rank test on the Gram matrix of distinct conditions.
    let xd = DMatrix::from_fn(conditions.len(), p, |i, j| kind.design_row(conditions[i])[j]);
    let sv = (xd.transpose() * &xd).symmetric_eigenvalues();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo <= hi * 1e-12 {
        return Err(diagnose_rank(kind, &conditions));
    }
    let chol = xtx.clone().cholesky().ok_or_else(|| diagnose_rank(kind, &conditions))?;
    let xtx_inv = chol.inverse();
    let beta = &xtx_inv * (x.transpose() * &y);

    let resid = &y - &x * &beta;
    let dof = rows - p;
    let s2 = if dof > 0 {
        resid.norm_squared() / dof as f64
    } else {
        let (ss, df) = by_condition.values().filter(|v| v.len() > 1).fold((0.0, 0usize), |(ss, df), v| {
            (ss + sample_variance(v) * (v.len() - 1) as f64, df + v.len() - 1)
        });
        if df > 0 {
            ss / df as f64
        } else {
            sample_variance(y.as_slice())
        }
    };
    let cov = xtx_inv * s2;
    Ok(CoefficientEstimate {
        county_id: first.county_id.clone(),
        model_kind: kind,
        beta: beta.iter().copied().collect(),
        cov: (0..p).map(|i| (0..p).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect()).collect(),
        replicates_total: rows,
        distinct_conditions: conditions.len(),
    })
}

/// Evaluates the response function; with `cov`, also `a' cov a`.
pub fn predict_response(
    kind: ModelKind,
    beta: &[f64],
    cov: Option<&[Vec<f64>]>,
    condition: TreatmentCondition,
) -> ResponsePrediction {
    assert_eq!(beta.len(), kind.num_coefficients(), "coefficient count does not match model kind");
    let a = kind.design_row(condition);
    let mean = a.iter().zip(beta).map(|(a, b)| a * b).sum();
    let variance = cov.map(|c| {
        let mut v = 0.0;
        for i in 0..a.len() {
            for j in 0..a.len() {
                v += a[i] * c[i][j] * a[j];
            }
        }
        v.max(0.0)
    });
    ResponsePrediction { mean, variance }
}

/// Per-coefficient GP observation-noise variances: the diagonal of the OLS
/// covariance, floored at [`NOISE_FLOOR`]. With `divide_by_replicates`, the
/// diagonal is further divided by the county's replicate count.
pub fn noise_variance_for_gp(est: &CoefficientEstimate, divide_by_replicates: bool) -> Vec<f64> {
    let rc = if divide_by_replicates { est.replicates_total.max(1) as f64 } else { 1.0 };
    (0..est.beta.len())
        .map(|m| {
            let v = est.cov[m][m] / rc;
            if v.is_finite() { v.max(NOISE_FLOOR) } else { NOISE_FLOOR }
        })
        .collect()
}
