//! Expensive ground-truth generators and the interface the sequential
//! design uses to call them.

pub mod linear;
pub mod oud;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{Observation, TreatmentCondition};
use crate::error::{Error, Result};

pub use linear::{linear_truth_outcome, LinearCoefficients};
pub use oud::{
    expected_deaths_analytic, simulate_replicate, simulate_trajectory, transition_probabilities, CohortState,
    CountyOudParams, HealthState, InitialMix, SimConfig, TransitionProbabilities,
};

/// A stochastic simulator indexed by county and treatment condition.
pub trait Simulator: Sync {
    /// One replicate outcome (deaths per 100,000) for the given seed.
    fn simulate(&self, county_id: &str, condition: TreatmentCondition, seed: u64) -> Result<f64>;

    /// Exact expected outcome, when the simulator can provide one.
    fn expected(&self, county_id: &str, condition: TreatmentCondition) -> Result<f64>;
}

/// `replicates` independent runs with seeds `seed, seed + 1, ...`.
pub fn run_batch<S: Simulator + ?Sized>(
    sim: &S,
    county_id: &str,
    condition: TreatmentCondition,
    seed: u64,
    replicates: usize,
) -> Result<Vec<Observation>> {
    if replicates == 0 {
        return Err(Error::invalid("run_batch needs at least one replicate"));
    }
    (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            Ok(Observation {
                county_id: county_id.to_owned(),
                condition,
                outcome: sim.simulate(county_id, condition, s)?,
                replicate_seed: s,
            })
        })
        .collect()
}

/// The cohort model over a table of county parameters.
#[derive(Debug, Clone)]
pub struct OudSimulator {
    pub params: BTreeMap<String, CountyOudParams>,
    pub config: SimConfig,
}

impl OudSimulator {
    pub fn new(params: BTreeMap<String, CountyOudParams>, config: SimConfig) -> Result<Self> {
        config.validate()?;
        for (id, p) in &params {
            p.validate().map_err(|e| Error::invalid(format!("county {id}: {e}")))?;
        }
        Ok(OudSimulator { params, config })
    }

    /// Reads a JSON object keyed by county id.
    pub fn load_params(path: impl AsRef<Path>) -> Result<BTreeMap<String, CountyOudParams>> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn county(&self, id: &str) -> Result<&CountyOudParams> {
        self.params.get(id).ok_or_else(|| Error::UnknownCounty(id.to_owned()))
    }
}

impl Simulator for OudSimulator {
    fn simulate(&self, county_id: &str, condition: TreatmentCondition, seed: u64) -> Result<f64> {
        let cfg = SimConfig { rng_seed: seed, ..self.config };
        simulate_replicate(self.county(county_id)?, condition, &cfg)
    }

    fn expected(&self, county_id: &str, condition: TreatmentCondition) -> Result<f64> {
        expected_deaths_analytic(self.county(county_id)?, condition, &self.config)
    }
}

/// Linear-truth simulator: outcomes are exact response-function values plus
/// per-county Gaussian noise.
#[derive(Debug, Clone, Default)]
pub struct LinearSimulator {
    pub coefficients: BTreeMap<String, LinearCoefficients>,
}

impl LinearSimulator {
    pub fn new(coefficients: BTreeMap<String, LinearCoefficients>) -> Self {
        LinearSimulator { coefficients }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(LinearSimulator { coefficients: serde_json::from_str(&text)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.coefficients)?)?;
        Ok(())
    }

    fn county(&self, id: &str) -> Result<&LinearCoefficients> {
        self.coefficients.get(id).ok_or_else(|| Error::UnknownCounty(id.to_owned()))
    }
}

impl Simulator for LinearSimulator {
    fn simulate(&self, county_id: &str, condition: TreatmentCondition, seed: u64) -> Result<f64> {
        let c = self.county(county_id)?;
        Ok(linear_truth_outcome(c, condition, c.noise_sd, seed))
    }

    /// The noise-free mean. Clipping at zero biases the replicate mean only
    /// when the mean is within a few noise sds of zero.
    fn expected(&self, county_id: &str, condition: TreatmentCondition) -> Result<f64> {
        Ok(self.county(county_id)?.mean(condition))
    }
}
