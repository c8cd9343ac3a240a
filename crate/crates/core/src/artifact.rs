//! Self-contained record of a finished run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::domain::{CountyFeatures, Observation, Standardizer};
use crate::error::{Error, Result};
use crate::eval::{GridTable, TruthTable};
use crate::gpr::{GpModelSet, GpSetSnapshot};
use crate::regression::{CoefficientEstimate, ModelKind};
use crate::seqdes::{fit_models_on, Checkpoint, DesignConfig, HistoryRecord, SeqDesState, StopReason};
use crate::sim::Simulator;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub design: DesignConfig,
    pub counties: Vec<CountyFeatures>,
    pub standardizer: Standardizer,
    pub models: GpSetSnapshot,
    pub estimates: BTreeMap<String, CoefficientEstimate>,
    pub observations: Vec<Observation>,
    pub history: Vec<HistoryRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub truth: Option<TruthTable>,
    pub stop_reason: StopReason,
}

impl RunArtifact {
    pub fn from_state(config: &RunConfig, state: &SeqDesState, stop_reason: StopReason) -> Result<Self> {
        let models = state.models().ok_or_else(|| Error::invalid("state has no trained models"))?;
        Ok(RunArtifact {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            config_hash: config.content_hash()?,
            design: state.config().clone(),
            counties: state.counties().to_vec(),
            standardizer: state.features().transform.clone(),
            models: models.snapshot(),
            estimates: state.estimates().clone(),
            observations: state.observations().values().flatten().cloned().collect(),
            history: state.history().to_vec(),
            checkpoints: state.checkpoints().to_vec(),
            truth: state.truth().cloned(),
            stop_reason,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let a: RunArtifact = serde_json::from_slice(&bytes)?;
        if a.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "artifact schema version {} is not supported (expected {SCHEMA_VERSION})",
                a.schema_version
            )));
        }
        Ok(a)
    }

    pub fn model_set(&self) -> Result<GpModelSet> {
        GpModelSet::from_snapshot(self.models.clone())
    }

    /// `(county id, standardized features)` in county order.
    pub fn inputs(&self) -> Vec<(String, Vec<f64>)> {
        self.counties.iter().map(|c| (c.county_id.clone(), self.standardizer.transform(&c.to_vec()))).collect()
    }

    pub fn observations_by_county(&self) -> BTreeMap<String, Vec<Observation>> {
        let mut m: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
        for o in &self.observations {
            m.entry(o.county_id.clone()).or_default().push(o.clone());
        }
        m
    }

    /// Refits the response regression and GPs under `kind` on the stored
    /// observations.
    pub fn fit_models_for(&self, kind: ModelKind) -> Result<GpModelSet> {
        fit_models_on(&self.design, &self.counties, &self.observations_by_county(), kind)
    }

    /// Grid predictions from the final posterior means.
    pub fn prediction_table(&self) -> Result<GridTable> {
        let models = self.model_set()?;
        let coefs = self
            .inputs()
            .into_iter()
            .map(|(id, x)| Ok((id, models.posterior(&x)?.mean)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(GridTable::from_coefficients(self.design.grid.clone(), self.design.response, &coefs))
    }
}

/// Loads inputs, builds the truth table, runs the design to completion.
pub fn run_experiment(config: &RunConfig) -> Result<RunArtifact> {
    let counties = config.load_counties()?;
    let sim = config.load_simulator()?;
    run_with(config, counties, sim.as_ref())
}

pub fn run_with(config: &RunConfig, counties: Vec<CountyFeatures>, sim: &dyn Simulator) -> Result<RunArtifact> {
    let design = config.design();
    let ids: Vec<String> = counties.iter().map(|c| c.county_id.clone()).collect();
    let truth = GridTable::from_simulator(sim, design.grid.clone(), &ids, config.truth, config.holdout_replicates, config.seed)?;
    let mut state = SeqDesState::new(design, counties)?.with_truth(truth)?;
    let reason = state.run(sim)?;
    log::info!(
        "run finished ({reason:?}) after {} steps, {} of {} runs used",
        state.history().len(),
        state.budget_used(),
        state.budget_total()
    );
    RunArtifact::from_state(config, &state, reason)
}
