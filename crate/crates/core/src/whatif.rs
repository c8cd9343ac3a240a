//! Read-only queries against a fitted artifact: list counties, summarize a
//! county's coefficients, predict the outcome of a treatment condition.

use serde::{Deserialize, Serialize};

use crate::artifact::RunArtifact;
use crate::domain::{CountyFeatures, Standardizer, TreatmentCondition, TreatmentGrid};
use crate::error::{Error, Result};
use crate::eval::{coefficient_intervals, CoefficientInterval};
use crate::gpr::{sample_independent, GpModelSet};
use crate::regression::ModelKind;
use crate::rng::derive_seed;
use crate::stats::central_interval;

pub const COEFFICIENT_SAMPLES: usize = 10_000;
pub const DEFAULT_PREDICT_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub levels_n: u32,
    pub levels_b: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountiesResponse {
    pub grid: GridInfo,
    pub response: ModelKind,
    pub counties: Vec<CountyFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsResponse {
    pub county_id: String,
    pub coefficients: Vec<CoefficientInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub county_id: String,
    pub n: u32,
    pub b: u32,
    #[serde(default = "yes")]
    pub want_interval: bool,
    #[serde(default, rename = "S", alias = "samples")]
    pub samples: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub county_id: String,
    pub n: u32,
    pub b: u32,
    /// Deaths per 100,000.
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Posterior-mean coefficients, in the model's coefficient order.
    pub coefficients: Vec<f64>,
}

/// An artifact's models, ready to answer queries.
#[derive(Debug, Clone)]
pub struct WhatIf {
    models: GpModelSet,
    grid: TreatmentGrid,
    counties: Vec<CountyFeatures>,
    inputs: Vec<Vec<f64>>,
}

impl WhatIf {
    pub fn from_artifact(a: &RunArtifact) -> Result<Self> {
        Self::new(a.model_set()?, a.design.grid.clone(), &a.counties, &a.standardizer)
    }

    pub fn new(models: GpModelSet, grid: TreatmentGrid, counties: &[CountyFeatures], transform: &Standardizer) -> Result<Self> {
        let mut pairs: Vec<(CountyFeatures, Vec<f64>)> =
            counties.iter().map(|c| (c.clone(), transform.transform(&c.to_vec()))).collect();
        pairs.sort_by(|x, y| x.0.county_id.cmp(&y.0.county_id));
        if pairs.windows(2).any(|w| w[0].0.county_id == w[1].0.county_id) {
            return Err(Error::invalid("duplicate county id"));
        }
        let (counties, inputs) = pairs.into_iter().unzip();
        Ok(WhatIf { models, grid, counties, inputs })
    }

    pub fn grid(&self) -> &TreatmentGrid {
        &self.grid
    }

    pub fn kind(&self) -> ModelKind {
        self.models.kind()
    }

    /// Counties sorted by id.
    pub fn counties(&self) -> CountiesResponse {
        CountiesResponse {
            grid: GridInfo { levels_n: self.grid.levels_n(), levels_b: self.grid.levels_b() },
            response: self.kind(),
            counties: self.counties.clone(),
        }
    }

    fn input(&self, county_id: &str) -> Result<&[f64]> {
        self.counties
            .binary_search_by(|c| c.county_id.as_str().cmp(county_id))
            .map(|i| self.inputs[i].as_slice())
            .map_err(|_| Error::UnknownCounty(county_id.to_owned()))
    }

    pub fn coefficients(&self, county_id: &str, samples: usize, seed: u64) -> Result<CoefficientsResponse> {
        let post = self.models.posterior(self.input(county_id)?)?;
        Ok(CoefficientsResponse {
            county_id: county_id.to_owned(),
            coefficients: coefficient_intervals(&post, self.kind().coefficient_names(), samples, derive_seed(seed, "coefficients", 0)),
        })
    }

    pub fn predict(&self, req: &PredictRequest, seed: u64) -> Result<PredictResponse> {
        let x = self.input(&req.county_id)?;
        let cond = TreatmentCondition::new(req.n, req.b);
        if !self.grid.contains(cond) {
            return Err(Error::invalid(format!(
                "condition {cond} is outside the {}x{} grid",
                self.grid.levels_n(),
                self.grid.levels_b()
            )));
        }
        let samples = req.samples.unwrap_or(DEFAULT_PREDICT_SAMPLES);
        if samples == 0 {
            return Err(Error::invalid("S must be positive"));
        }
        let post = self.models.posterior(x)?;
        let a = self.kind().design_row(cond);
        let dot = |beta: &[f64]| a.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let mean = dot(&post.mean);
        let (ci_low, ci_high) = if req.want_interval {
            let mut zeta: Vec<f64> =
                sample_independent(&post, samples, derive_seed(seed, "predict", 0)).iter().map(|d| dot(d)).collect();
            let (lo, hi) = central_interval(&mut zeta, 0.95);
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        Ok(PredictResponse { county_id: req.county_id.clone(), n: req.n, b: req.b, mean, ci_low, ci_high, coefficients: post.mean })
    }
}
