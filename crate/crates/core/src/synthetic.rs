//! Synthetic county sets with known response coefficients, for experiments
//! and tests where the truth has to be exact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{standardize, write_counties_csv, CountyFeatures};
use crate::error::Result;
use crate::rng::derived_rng;
use crate::sim::{CountyOudParams, LinearCoefficients, LinearSimulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub counties: usize,
    /// Replicate noise sd is drawn uniformly from this range per county.
    pub noise_sd: (f64, f64),
    /// Interaction coefficient shared by all counties.
    pub mu_nb: f64,
    /// Sd of the county-specific part of each coefficient that the features
    /// do not explain, as a fraction of that coefficient's typical size.
    pub idiosyncratic: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { counties: 20, noise_sd: (4.0, 30.0), mu_nb: 0.0, idiosyncratic: 0.02, seed: 1 }
    }
}

/// Counties with plausible covariates, ids `c00`, `c01`, ...
pub fn random_counties(n: usize, seed: u64) -> Vec<CountyFeatures> {
    let mut rng = derived_rng(seed, "synthetic-counties", 0);
    (0..n)
        .map(|i| CountyFeatures {
            county_id: format!("c{i:02}"),
            centroid_lat: rng.random_range(39.8..42.0),
            centroid_lon: rng.random_range(-80.5..-75.0),
            median_income: rng.random_range(38_000.0..95_000.0),
            pop_density: 10f64.powf(rng.random_range(1.0..3.5)),
            pct_black: rng.random_range(0.005..0.25),
            population: rng.random_range(8_000..1_300_000),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub counties: Vec<CountyFeatures>,
    pub simulator: LinearSimulator,
}

impl SyntheticProblem {
    /// Writes `counties.csv` and `linear_truth.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let counties = dir.join("counties.csv");
        let truth = dir.join("linear_truth.json");
        write_counties_csv(&counties, &self.counties)?;
        self.simulator.save(&truth)?;
        Ok((counties, truth))
    }
}

/// Linear truth whose coefficients are smooth functions of the standardized
/// covariates plus a small county-specific term.
pub fn linear_problem(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    let counties = random_counties(spec.counties, spec.seed);
    let z = standardize(&counties)?.rows;
    let mut rng = derived_rng(spec.seed, "synthetic-coefficients", 0);
    let mut coefs = BTreeMap::new();
    for (c, x) in counties.iter().zip(&z) {
        let (lat, lon, inc, dens, blk) = (x[0], x[1], x[2], x[3], x[4]);
        let mut jitter = |scale: f64| scale * spec.idiosyncratic * (rng.random::<f64>() * 2.0 - 1.0) * 3f64.sqrt();
        let mu_0 = 85.0 - 10.0 * inc + 6.0 * (1.3 * lat).sin() + 5.0 * dens + 3.0 * blk + jitter(85.0);
        let mu_n = -3.5 + 0.6 * dens - 0.4 * lat + 0.3 * lon + jitter(3.5);
        let mu_b = -4.5 + 0.5 * blk + 0.4 * (lon + inc).tanh() + jitter(4.5);
        let (lo, hi) = spec.noise_sd;
        let noise_sd = if hi > lo { rng.random_range(lo..hi) } else { lo };
        coefs.insert(c.county_id.clone(), LinearCoefficients { mu_0, mu_n, mu_b, mu_nb: spec.mu_nb, noise_sd });
    }
    Ok(SyntheticProblem { counties, simulator: LinearSimulator::new(coefs) })
}

/// Cohort-model parameters whose dispensing rates and baseline risk vary
/// with the covariates.
pub fn oud_params_for(counties: &[CountyFeatures]) -> Result<BTreeMap<String, CountyOudParams>> {
    let z = standardize(counties)?.rows;
    Ok(counties
        .iter()
        .zip(&z)
        .map(|(c, x)| {
            let mut p = CountyOudParams::default();
            p.opioid_rate = (50.0 * (1.0 + 0.2 * x[3].tanh())).max(5.0);
            p.nal_rate = (5.0 * (1.0 - 0.3 * x[2].tanh())).max(0.5);
            p.bup_rate = (5.0 * (1.0 + 0.3 * x[0].tanh())).max(0.5);
            p.fentanyl_rate = (10.0 * (1.0 + 0.4 * x[4].tanh())).max(1.0);
            p.beta[0] += 0.2 * x[2].tanh();
            p.beta[4] += 0.15 * x[3].tanh();
            (c.county_id.clone(), p)
        })
        .collect())
}
