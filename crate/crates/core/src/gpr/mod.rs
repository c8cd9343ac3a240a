//! Gaussian-process layer: one independent GP per response coefficient,
//! all over the same standardized county features.

pub mod fit;
pub mod kernel;
pub mod model;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::ModelKind;
use crate::rng::rng_from_seed;

pub use fit::{fit_hyperparameters, FitOptions, FitReport};
pub use kernel::{KernelComponent, KernelSpec};
pub use model::{GpModel, GpSnapshot};

/// One county's contribution to every output GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub county_id: String,
    /// Standardized features.
    pub x: Vec<f64>,
    /// Observed coefficient per output.
    pub targets: Vec<f64>,
    /// Observation-noise variance per output.
    pub noise: Vec<f64>,
}

/// Posterior mean and latent variance of every output at one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// The per-output GPs, trained on the same counties.
#[derive(Debug, Clone)]
pub struct GpModelSet {
    kind: ModelKind,
    row_ids: Vec<String>,
    rows: Vec<TrainingRow>,
    outputs: Vec<GpModel>,
    centered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSetSnapshot {
    pub kind: ModelKind,
    pub centered: bool,
    pub rows: Vec<TrainingRow>,
    pub outputs: Vec<GpSnapshot>,
}

impl GpModelSet {
    /// Builds one GP per output, each with its own kernel.
    pub fn new(kind: ModelKind, kernels: Vec<KernelSpec>, rows: Vec<TrainingRow>, centered: bool) -> Result<Self> {
        let p = kind.num_coefficients();
        if kernels.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: kernels.len() });
        }
        if rows.is_empty() {
            return Err(Error::invalid("GP model set needs at least one training row"));
        }
        for r in &rows {
            if r.targets.len() != p || r.noise.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: r.targets.len().min(r.noise.len()) });
            }
        }
        let mut ids: Vec<&str> = rows.iter().map(|r| r.county_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate county among GP training rows"));
        }
        let outputs = kernels
            .into_par_iter()
            .enumerate()
            .map(|(m, k)| {
                GpModel::new(
                    k,
                    rows.iter().map(|r| r.x.clone()).collect(),
                    rows.iter().map(|r| r.targets[m]).collect(),
                    rows.iter().map(|r| r.noise[m]).collect(),
                    centered,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpModelSet { kind, row_ids: rows.iter().map(|r| r.county_id.clone()).collect(), rows, outputs, centered })
    }

    pub fn from_snapshot(s: GpSetSnapshot) -> Result<Self> {
        if s.outputs.len() != s.kind.num_coefficients() {
            return Err(Error::DimensionMismatch { expected: s.kind.num_coefficients(), got: s.outputs.len() });
        }
        let outputs = s.outputs.into_iter().map(GpModel::from_snapshot).collect::<Result<Vec<_>>>()?;
        Ok(GpModelSet {
            kind: s.kind,
            row_ids: s.rows.iter().map(|r| r.county_id.clone()).collect(),
            rows: s.rows,
            outputs,
            centered: s.centered,
        })
    }

    pub fn snapshot(&self) -> GpSetSnapshot {
        GpSetSnapshot {
            kind: self.kind,
            centered: self.centered,
            rows: self.rows.clone(),
            outputs: self.outputs.iter().map(GpModel::snapshot).collect(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn outputs(&self) -> &[GpModel] {
        &self.outputs
    }

    pub fn kernels(&self) -> Vec<KernelSpec> {
        self.outputs.iter().map(|m| m.kernel().clone()).collect()
    }

    pub fn rows(&self) -> &[TrainingRow] {
        &self.rows
    }

    pub fn row(&self, county_id: &str) -> Option<&TrainingRow> {
        self.row_ids.iter().position(|id| id == county_id).map(|i| &self.rows[i])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Replaces the full training set, keeping kernels.
    pub fn with_rows(&self, rows: Vec<TrainingRow>) -> Result<Self> {
        Self::new(self.kind, self.kernels(), rows, self.centered)
    }

    /// Adds rows; a row for a county already present supersedes the old one.
    pub fn update(&self, new_rows: Vec<TrainingRow>) -> Result<Self> {
        let mut rows = self.rows.clone();
        for r in new_rows {
            match rows.iter().position(|o| o.county_id == r.county_id) {
                Some(i) => rows[i] = r,
                None => rows.push(r),
            }
        }
        self.with_rows(rows)
    }

    /// Refits every output's kernel (in parallel) and refactorizes.
    pub fn refit_hyperparameters(&self, opts: &FitOptions) -> Result<(Self, Vec<FitReport>)> {
        let reports = self
            .outputs
            .par_iter()
            .enumerate()
            .map(|(m, gp)| fit_hyperparameters(gp, &FitOptions { seed: opts.seed.wrapping_add(m as u64), ..*opts }))
            .collect::<Result<Vec<_>>>()?;
        let set = Self::new(self.kind, reports.iter().map(|r| r.kernel.clone()).collect(), self.rows.clone(), self.centered)?;
        Ok((set, reports))
    }

    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorSummary> {
        let mut mean = Vec::with_capacity(self.outputs.len());
        let mut var = Vec::with_capacity(self.outputs.len());
        for gp in &self.outputs {
            let (m, v) = gp.predict(x)?;
            mean.push(m);
            var.push(v);
        }
        Ok(PosteriorSummary { mean, var })
    }

    /// `samples` independent joint draws of the coefficient vector at `x`.
    pub fn sample_posterior(&self, x: &[f64], samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(sample_independent(&self.posterior(x)?, samples, seed))
    }
}

/// Draws from independent normals with the summary's means and variances.
/// Row `s` holds draw `s` of every output.
pub fn sample_independent(post: &PosteriorSummary, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let sd: Vec<f64> = post.var.iter().map(|v| v.max(0.0).sqrt()).collect();
    (0..samples)
        .map(|_| {
            post.mean
                .iter()
                .zip(&sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, x: f64, t: [f64; 3], noise: f64) -> TrainingRow {
        TrainingRow { county_id: id.into(), x: vec![x], targets: t.to_vec(), noise: vec![noise; 3] }
    }

    fn kernels() -> Vec<KernelSpec> {
        vec![KernelSpec::new(vec![KernelComponent::new(vec![0], 1.0, 4.0)]).unwrap(); 3]
    }

    fn set(rows: Vec<TrainingRow>) -> GpModelSet {
        GpModelSet::new(ModelKind::MainEffects, kernels(), rows, true).unwrap()
    }

    #[test]
    fn duplicate_county_replaces() {
        let s = set(vec![row("a", 0.0, [1.0, 2.0, 3.0], 0.1), row("b", 1.0, [2.0, 2.0, 2.0], 0.1)]);
        let u = s.update(vec![row("a", 0.0, [5.0, 5.0, 5.0], 0.1)]).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u.row("a").unwrap().targets, vec![5.0; 3]);
        let v = s.update(vec![row("c", 2.0, [0.0; 3], 0.1)]).unwrap();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn zero_variance_draws_equal_mean() {
        let post = PosteriorSummary { mean: vec![1.0, -2.0, 3.0], var: vec![0.0; 3] };
        let d = sample_independent(&post, 50, 1);
        assert!(d.iter().all(|r| r == &post.mean));
    }

    #[test]
    fn sampling_is_deterministic_and_converges() {
        let post = PosteriorSummary { mean: vec![10.0, -1.0, 0.5], var: vec![4.0, 0.25, 1.0] };
        let a = sample_independent(&post, 10_000, 9);
        assert_eq!(a, sample_independent(&post, 10_000, 9));
        for m in 0..3 {
            let mean = a.iter().map(|r| r[m]).sum::<f64>() / 10_000.0;
            let tol = 4.0 * post.var[m].sqrt() / 100.0;
            assert!((mean - post.mean[m]).abs() < tol, "output {m}: {mean}");
        }
    }

    #[test]
    fn lower_noise_observation_dominates() {
        let k = vec![KernelSpec::new(vec![KernelComponent::new(vec![0], 1.0, 100.0)]).unwrap(); 3];
        let rows = vec![
            TrainingRow { county_id: "lo".into(), x: vec![0.0], targets: vec![10.0; 3], noise: vec![0.1; 3] },
            TrainingRow { county_id: "hi".into(), x: vec![0.0], targets: vec![20.0; 3], noise: vec![5.0; 3] },
        ];
        let s = GpModelSet::new(ModelKind::MainEffects, k, rows, false).unwrap();
        let m = s.posterior(&[0.0]).unwrap().mean[0];
        assert!((m - 10.0).abs() < (m - 20.0).abs(), "{m}");
    }

    #[test]
    fn variance_shrinks_where_a_county_is_added() {
        let s = set(vec![row("a", 0.0, [1.0; 3], 0.5), row("b", 2.0, [2.0; 3], 0.5)]);
        let before = s.posterior(&[1.0]).unwrap();
        let after = s.update(vec![row("c", 1.0, [1.5; 3], 0.5)]).unwrap().posterior(&[1.0]).unwrap();
        for m in 0..3 {
            assert!(after.var[m] <= before.var[m] + 1e-12);
        }
    }

    #[test]
    fn snapshot_roundtrip_preserves_predictions() {
        let s = set(vec![row("a", 0.0, [1.0, 2.0, 3.0], 0.1), row("b", 1.0, [2.0, 0.0, 2.0], 0.3)]);
        let json = serde_json::to_string(&s.snapshot()).unwrap();
        let back = GpModelSet::from_snapshot(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(s.posterior(&[0.4]).unwrap(), back.posterior(&[0.4]).unwrap());
    }
}
