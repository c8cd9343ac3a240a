//! Run configuration: one JSON file naming the inputs and every knob of the
//! sequential design. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{read_counties_csv, CountyFeatures, TreatmentGrid};
use crate::error::{Error, Result};
use crate::eval::TruthSource;
use crate::gpr::{FitOptions, KernelSpec};
use crate::regression::ModelKind;
use crate::seqdes::{AcquisitionConfig, DesignConfig, InitPlan, NoiseModel, Strategy};
use crate::sim::{LinearSimulator, OudSimulator, SimConfig, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub counties: PathBuf,
    /// Per-county cohort-model parameters (JSON object keyed by county id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oud_params: Option<PathBuf>,
    /// Per-county linear coefficients, for synthetic ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_truth: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub horizon_years: u32,
    pub steps_per_year: u32,
    pub cohort_size: u64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        SimulationSettings { horizon_years: d.horizon_years, steps_per_year: d.steps_per_year, cohort_size: d.cohort_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: TreatmentGrid,
    #[serde(default)]
    pub init: InitPlan,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default = "default_rps")]
    pub replicates_per_step: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub noise_div_rc: bool,
    #[serde(default)]
    pub response: ModelKind,
    #[serde(default)]
    pub truth: TruthSource,
    /// Replicates per cell when `truth` is `holdout`.
    #[serde(default = "default_holdout")]
    pub holdout_replicates: usize,
    #[serde(default = "default_refit_every")]
    pub refit_every: usize,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "KernelSpec::county_default")]
    pub kernel: KernelSpec,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_tol")]
    pub plateau_tol: Option<f64>,
    #[serde(default)]
    pub simulation: SimulationSettings,
}

fn default_rps() -> usize {
    8
}
fn default_holdout() -> usize {
    40
}
fn default_refit_every() -> usize {
    5
}
fn default_plateau_window() -> usize {
    10
}
fn default_plateau_tol() -> Option<f64> {
    Some(1e-3)
}

impl RunConfig {
    /// Defaults for everything but the inputs and the budget.
    pub fn minimal(counties: impl Into<PathBuf>, budget: usize) -> Self {
        RunConfig {
            paths: Paths { counties: counties.into(), oud_params: None, linear_truth: None, output_dir: default_output_dir() },
            budget,
            seed: 0,
            grid: TreatmentGrid::default(),
            init: InitPlan::default(),
            acquisition: AcquisitionConfig::default(),
            replicates_per_step: default_rps(),
            strategy: Strategy::default(),
            noise: NoiseModel::default(),
            noise_div_rc: false,
            response: ModelKind::default(),
            truth: TruthSource::default(),
            holdout_replicates: default_holdout(),
            refit_every: default_refit_every(),
            fit: FitOptions::default(),
            kernel: KernelSpec::county_default(),
            plateau_window: default_plateau_window(),
            plateau_tol: default_plateau_tol(),
            simulation: SimulationSettings::default(),
        }
    }

    pub fn design(&self) -> DesignConfig {
        DesignConfig {
            grid: self.grid.clone(),
            response: self.response,
            noise: self.noise,
            noise_div_rc: self.noise_div_rc,
            strategy: self.strategy,
            init: self.init.clone(),
            acquisition: self.acquisition.clone(),
            replicates_per_step: self.replicates_per_step,
            budget: self.budget,
            refit_every: self.refit_every,
            fit: self.fit,
            kernel: self.kernel.clone(),
            centered: true,
            plateau_window: self.plateau_window,
            plateau_tol: self.plateau_tol,
            seed: self.seed,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon_years: self.simulation.horizon_years,
            steps_per_year: self.simulation.steps_per_year,
            cohort_size: self.simulation.cohort_size,
            rng_seed: 0,
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.counties);
        if let Some(p) = self.paths.oud_params.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.linear_truth.as_mut() {
            fix(p);
        }
        fix(&mut self.paths.output_dir);
    }

    /// Checks the inputs exist, the design is consistent and the budget
    /// covers initialization.
    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        if !p.counties.is_file() {
            return Err(Error::Config(format!("county file {} does not exist", p.counties.display())));
        }
        match (&p.oud_params, &p.linear_truth) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of paths.oud_params and paths.linear_truth".into())),
            (None, None) => return Err(Error::Config("one of paths.oud_params or paths.linear_truth is required".into())),
            (Some(f), None) | (None, Some(f)) if !f.is_file() => {
                return Err(Error::Config(format!("simulator file {} does not exist", f.display())))
            }
            _ => {}
        }
        if self.truth == TruthSource::Holdout && self.holdout_replicates == 0 {
            return Err(Error::Config("holdout truth needs holdout_replicates >= 1".into()));
        }
        self.sim_config().validate()?;
        let design = self.design();
        design.validate()?;
        let counties = read_counties_csv(&p.counties)?;
        let cost = design.init.total_cost(&design.grid, &counties);
        if self.budget < cost {
            return Err(Error::Config(format!("budget {} is below the initialization cost {cost}", self.budget)));
        }
        Ok(())
    }

    pub fn load_counties(&self) -> Result<Vec<CountyFeatures>> {
        read_counties_csv(&self.paths.counties)
    }

    pub fn load_simulator(&self) -> Result<Box<dyn Simulator + Send>> {
        match (&self.paths.oud_params, &self.paths.linear_truth) {
            (Some(p), _) => Ok(Box::new(OudSimulator::new(OudSimulator::load_params(p)?, self.sim_config())?)),
            (None, Some(p)) => Ok(Box::new(LinearSimulator::load(p)?)),
            (None, None) => Err(Error::Config("no simulator configured".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Content hash of the canonical JSON, in git object form
    /// (`sha256("blob <len>\0" + content)`).
    pub fn content_hash(&self) -> Result<String> {
        let body = serde_json::to_vec(self)?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(&body);
        Ok(format!("sha256:{}", hex::encode(h.finalize())))
    }
}

/// Parses without touching the filesystem beyond `text`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Reads, resolves relative paths against the file's directory, and validates.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(r#"{"paths": {"counties": "c.csv", "linear_truth": "t.json"}, "budget": 500}"#).unwrap();
        assert_eq!(c.grid, TreatmentGrid::new(5, 5).unwrap());
        assert_eq!(c.acquisition.samples, 256);
        assert_eq!(c.design().acquisition.weights_for(3).unwrap(), vec![1.0 / 3.0; 3]);
        assert_eq!(c.replicates_per_step, 8);
        assert_eq!(c.paths.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_config(r#"{"paths": {"counties": "c.csv"}, "budget": 5, "budgett": 6}"#).unwrap_err();
        assert!(e.to_string().contains("budgett"), "{e}");
        assert!(parse_config(r#"{"paths": {"counties": "c.csv", "extra": 1}, "budget": 5}"#).is_err());
        assert!(parse_config(r#"{"paths": {"counties": "c.csv"}, "budget": 5, "init": {"r_bse": 1}}"#).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::minimal("c.csv", 100);
        let mut b = a.clone();
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.seed = 1;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert!(a.content_hash().unwrap().starts_with("sha256:"));
    }
}
