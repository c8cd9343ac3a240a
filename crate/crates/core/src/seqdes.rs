//! Two-stage sequential design.
//!
//! Each iteration picks the county whose scalarized posterior has the largest
//! signal-to-noise ratio, then the treatment condition in that county whose
//! predicted outcome has the widest 95% credible interval, simulates a batch of
//! replicates there, refits that county's response regression on all of its
//! observations, and replaces its row in the GP training set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{standardize, CountyFeatures, Observation, StandardizedFeatures, TreatmentCondition, TreatmentGrid};
use crate::error::{Error, Result};
use crate::eval::metrics::{error_summary, GridTable, TruthTable};
use crate::gpr::{sample_independent, FitOptions, GpModelSet, KernelSpec, PosteriorSummary, TrainingRow};
use crate::regression::{fit_response, noise_variance_for_gp, CoefficientEstimate, ModelKind};
use crate::rng::derive_seed;
use crate::sim::{run_batch, Simulator};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceSource {
    /// Posterior variance of the latent coefficient function.
    #[default]
    Posterior,
    /// The county's regression-noise variance where it has one; posterior
    /// variance otherwise.
    ObservationNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// Scalarization weights; `None` means uniform over the outputs.
    pub weights: Option<Vec<f64>>,
    pub snr_epsilon: f64,
    pub variance_source: VarianceSource,
    /// Posterior draws per condition-selection call.
    pub samples: usize,
    /// Mixed into the run seed for the condition-selection draws.
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            weights: None,
            snr_epsilon: 1e-6,
            variance_source: VarianceSource::Posterior,
            samples: 256,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.weights {
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config("acquisition weights must be finite and >= 0".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("acquisition weights sum to {s}, expected 1")));
            }
        }
        if !(self.snr_epsilon > 0.0) {
            return Err(Error::Config("snr_epsilon must be positive".into()));
        }
        if self.samples < 16 {
            return Err(Error::Config(format!("acquisition needs at least 16 samples, got {}", self.samples)));
        }
        Ok(())
    }

    /// Weights for `p` outputs.
    pub fn weights_for(&self, p: usize) -> Result<Vec<f64>> {
        match &self.weights {
            None => Ok(vec![1.0 / p as f64; p]),
            Some(w) if w.len() == p => Ok(w.clone()),
            Some(w) => Err(Error::DimensionMismatch { expected: p, got: w.len() }),
        }
    }
}

/// `sigma / max(|mu|, eps)` of the weighted sum of the outputs.
pub fn snr_score(post: &PosteriorSummary, weights: &[f64], snr_epsilon: f64) -> f64 {
    let mu: f64 = weights.iter().zip(&post.mean).map(|(w, m)| w * m).sum();
    let var: f64 = weights.iter().zip(&post.var).map(|(w, v)| w * w * v.max(0.0)).sum();
    var.sqrt() / mu.abs().max(snr_epsilon)
}

/// Argmax of [`snr_score`]; ties go to the lexicographically smallest id.
pub fn select_county(candidates: &[(String, PosteriorSummary)], cfg: &AcquisitionConfig) -> Result<String> {
    let mut best: Option<(&str, f64)> = None;
    for (id, post) in candidates {
        let w = cfg.weights_for(post.mean.len())?;
        let s = snr_score(post, &w, cfg.snr_epsilon);
        let better = match best {
            None => true,
            Some((bid, bs)) => s > bs || (s == bs && id.as_str() < bid),
        };
        if better {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id.to_owned()).ok_or_else(|| Error::invalid("no candidate counties"))
}

/// Empirical 95% interval width of the predicted outcome at every grid
/// condition, all conditions sharing one set of coefficient draws.
pub fn condition_widths(post: &PosteriorSummary, kind: ModelKind, grid: &TreatmentGrid, samples: usize, seed: u64) -> Vec<f64> {
    let draws = sample_independent(post, samples, seed);
    let mut zeta = vec![0.0; samples];
    grid.conditions()
        .map(|c| {
            let a = kind.design_row(c);
            for (z, d) in zeta.iter_mut().zip(&draws) {
                *z = a.iter().zip(d).map(|(a, f)| a * f).sum();
            }
            zeta.sort_by(f64::total_cmp);
            quantile_sorted(&zeta, 0.975) - quantile_sorted(&zeta, 0.025)
        })
        .collect()
}

/// Widest-interval condition; ties go to the smallest `(n, b)`.
pub fn select_condition_from_posterior(
    post: &PosteriorSummary,
    kind: ModelKind,
    grid: &TreatmentGrid,
    samples: usize,
    seed: u64,
) -> TreatmentCondition {
    let widths = condition_widths(post, kind, grid, samples, seed);
    let mut best = 0;
    for (i, w) in widths.iter().enumerate() {
        if *w > widths[best] {
            best = i;
        }
    }
    grid.enumerate()[best]
}

pub fn select_condition(
    models: &GpModelSet,
    x: &[f64],
    grid: &TreatmentGrid,
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<TreatmentCondition> {
    let post = models.posterior(x)?;
    Ok(select_condition_from_posterior(&post, models.kind(), grid, cfg.samples, seed))
}

/// Replicates run for each county before the sequential loop starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitPlan {
    /// `None` means every county.
    pub counties: Option<Vec<String>>,
    pub r_base: usize,
    pub r_init: usize,
    /// Non-baseline conditions; `None` means the three non-baseline corners
    /// plus the grid center.
    pub conditions: Option<Vec<TreatmentCondition>>,
}

impl Default for InitPlan {
    fn default() -> Self {
        InitPlan { counties: None, r_base: 10, r_init: 3, conditions: None }
    }
}

impl InitPlan {
    pub fn new(r_base: usize, r_init: usize) -> Result<Self> {
        let p = InitPlan { r_base, r_init, ..Default::default() };
        p.check_replicates()?;
        Ok(p)
    }

    fn check_replicates(&self) -> Result<()> {
        if self.r_init < 1 || self.r_base < self.r_init {
            return Err(Error::Config(format!(
                "init plan needs r_base >= r_init >= 1, got r_base={} r_init={}",
                self.r_base, self.r_init
            )));
        }
        Ok(())
    }

    pub fn validate(&self, grid: &TreatmentGrid) -> Result<()> {
        self.check_replicates()?;
        for c in self.extra_conditions(grid) {
            if !grid.contains(c) {
                return Err(Error::Config(format!("initial condition {c} is outside the grid")));
            }
        }
        Ok(())
    }

    /// Non-baseline initial conditions, deduplicated, in sorted order.
    pub fn extra_conditions(&self, grid: &TreatmentGrid) -> Vec<TreatmentCondition> {
        let mut cs = match &self.conditions {
            Some(cs) => cs.clone(),
            None => {
                let (ln, lb) = (grid.levels_n() - 1, grid.levels_b() - 1);
                vec![
                    TreatmentCondition::new(ln, 0),
                    TreatmentCondition::new(0, lb),
                    TreatmentCondition::new(ln, lb),
                    TreatmentCondition::new(grid.levels_n() / 2, grid.levels_b() / 2),
                ]
            }
        };
        cs.retain(|c| *c != TreatmentCondition::BASELINE);
        cs.sort();
        cs.dedup();
        cs
    }

    pub fn cost_per_county(&self, grid: &TreatmentGrid) -> usize {
        self.r_base + self.r_init * self.extra_conditions(grid).len()
    }

    pub fn initial_counties(&self, all: &[CountyFeatures]) -> Vec<String> {
        match &self.counties {
            Some(ids) => ids.clone(),
            None => all.iter().map(|c| c.county_id.clone()).collect(),
        }
    }

    pub fn total_cost(&self, grid: &TreatmentGrid, all: &[CountyFeatures]) -> usize {
        self.initial_counties(all).len() * self.cost_per_county(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Each county's own regression variance.
    #[default]
    #[serde(alias = "heteroscedastic")]
    Hetero,
    /// One pooled variance per output: the mean over counties.
    #[serde(alias = "homoscedastic")]
    Homo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// County by SNR, then condition by interval width.
    #[default]
    TwoStage,
    /// County by SNR, then every grid condition.
    OneStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub grid: TreatmentGrid,
    pub response: ModelKind,
    pub noise: NoiseModel,
    /// Divide regression variances by the county's replicate count before
    /// handing them to the GP.
    pub noise_div_rc: bool,
    pub strategy: Strategy,
    pub init: InitPlan,
    pub acquisition: AcquisitionConfig,
    pub replicates_per_step: usize,
    /// Total simulation runs, initialization included.
    pub budget: usize,
    /// Refit kernel hyperparameters after this many GP updates.
    pub refit_every: usize,
    pub fit: FitOptions,
    /// Template kernel, copied for every output.
    pub kernel: KernelSpec,
    pub centered: bool,
    pub plateau_window: usize,
    /// `None` disables plateau stopping.
    pub plateau_tol: Option<f64>,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            grid: TreatmentGrid::default(),
            response: ModelKind::MainEffects,
            noise: NoiseModel::Hetero,
            noise_div_rc: false,
            strategy: Strategy::TwoStage,
            init: InitPlan::default(),
            acquisition: AcquisitionConfig::default(),
            replicates_per_step: 8,
            budget: 2000,
            refit_every: 5,
            fit: FitOptions::default(),
            kernel: KernelSpec::county_default(),
            centered: true,
            plateau_window: 10,
            plateau_tol: Some(1e-3),
            seed: 0,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        self.init.validate(&self.grid)?;
        self.acquisition.validate()?;
        self.acquisition.weights_for(self.response.num_coefficients())?;
        self.kernel.validate()?;
        if self.replicates_per_step == 0 {
            return Err(Error::Config("replicates_per_step must be >= 1".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be >= 1".into()));
        }
        if self.plateau_window == 0 {
            return Err(Error::Config("plateau_window must be >= 1".into()));
        }
        Ok(())
    }

    /// Runs one loop iteration costs under the configured strategy.
    pub fn step_cost(&self) -> usize {
        match self.strategy {
            Strategy::TwoStage => self.replicates_per_step,
            Strategy::OneStage => self.replicates_per_step.div_ceil(self.grid.size()) * self.grid.size(),
        }
    }
}

/// One loop iteration, as written to the history CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub county_id: String,
    pub n: u32,
    pub b: u32,
    pub replicates: usize,
    pub budget_used: usize,
    pub rel_error: Option<f64>,
    pub mse: Option<f64>,
}

/// Posterior-mean coefficients of every county after an iteration
/// (iteration 0 is right after initialization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: usize,
    pub budget_used: usize,
    pub coefficients: BTreeMap<String, Vec<f64>>,
    /// Mean over counties of the weighted coefficient sum.
    pub scalarized_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced,
    /// Not enough budget left for another iteration; nothing was changed.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    Plateau,
}

#[derive(Debug, Clone)]
pub struct SeqDesState {
    config: DesignConfig,
    counties: Vec<CountyFeatures>,
    features: StandardizedFeatures,
    observations: BTreeMap<String, Vec<Observation>>,
    estimates: BTreeMap<String, CoefficientEstimate>,
    models: Option<GpModelSet>,
    budget_used: usize,
    init_cost: usize,
    history: Vec<HistoryRecord>,
    checkpoints: Vec<Checkpoint>,
    truth: Option<TruthTable>,
    updates_since_refit: usize,
    refits: u64,
    batches: u64,
    terminal: bool,
}

impl SeqDesState {
    pub fn new(config: DesignConfig, counties: Vec<CountyFeatures>) -> Result<Self> {
        config.validate()?;
        for c in &counties {
            c.validate()?;
        }
        let features = standardize(&counties)?;
        let mut ids: Vec<&str> = counties.iter().map(|c| c.county_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate county id"));
        }
        for id in config.init.initial_counties(&counties) {
            if !counties.iter().any(|c| c.county_id == id) {
                return Err(Error::UnknownCounty(id));
            }
        }
        let init_cost = config.init.total_cost(&config.grid, &counties);
        if init_cost > config.budget {
            return Err(Error::BudgetExhausted { needed: init_cost, remaining: config.budget });
        }
        Ok(SeqDesState {
            config,
            counties,
            features,
            observations: BTreeMap::new(),
            estimates: BTreeMap::new(),
            models: None,
            budget_used: 0,
            init_cost,
            history: Vec::new(),
            checkpoints: Vec::new(),
            truth: None,
            updates_since_refit: 0,
            refits: 0,
            batches: 0,
            terminal: false,
        })
    }

    /// Scores every checkpoint against `truth` from now on.
    pub fn with_truth(mut self, truth: TruthTable) -> Result<Self> {
        if truth.grid != self.config.grid {
            return Err(Error::invalid("truth grid differs from design grid"));
        }
        for id in truth.counties() {
            if self.x_of(id).is_none() {
                return Err(Error::UnknownCounty(id.to_owned()));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn counties(&self) -> &[CountyFeatures] {
        &self.counties
    }

    pub fn features(&self) -> &StandardizedFeatures {
        &self.features
    }

    pub fn observations(&self) -> &BTreeMap<String, Vec<Observation>> {
        &self.observations
    }

    pub fn estimates(&self) -> &BTreeMap<String, CoefficientEstimate> {
        &self.estimates
    }

    pub fn models(&self) -> Option<&GpModelSet> {
        self.models.as_ref()
    }

    pub fn budget_used(&self) -> usize {
        self.budget_used
    }

    pub fn budget_total(&self) -> usize {
        self.config.budget
    }

    pub fn init_cost(&self) -> usize {
        self.init_cost
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn truth(&self) -> Option<&TruthTable> {
        self.truth.as_ref()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Standardized features of a county.
    pub fn x_of(&self, county_id: &str) -> Option<&[f64]> {
        self.counties.iter().position(|c| c.county_id == county_id).map(|i| self.features.rows[i].as_slice())
    }

    fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.counties.iter().map(|c| c.county_id.clone()).collect();
        ids.sort();
        ids
    }

    fn models_ref(&self) -> Result<&GpModelSet> {
        self.models.as_ref().ok_or_else(|| Error::invalid("sequential design is not initialized"))
    }

    fn simulate(&mut self, sim: &dyn Simulator, county: &str, c: TreatmentCondition, reps: usize) -> Result<Vec<Observation>> {
        let seed = derive_seed(self.config.seed, "replicates", self.batches);
        self.batches += 1;
        run_batch(sim, county, c, seed, reps)
    }

    fn training_rows(&self) -> Result<Vec<TrainingRow>> {
        let mut rows: Vec<TrainingRow> = self
            .estimates
            .iter()
            .map(|(id, est)| TrainingRow {
                county_id: id.clone(),
                x: self.x_of(id).expect("estimated county has features").to_vec(),
                targets: est.beta.clone(),
                noise: noise_variance_for_gp(est, self.config.noise_div_rc),
            })
            .collect();
        if self.config.noise == NoiseModel::Homo {
            let p = self.config.response.num_coefficients();
            let pooled: Vec<f64> =
                (0..p).map(|m| rows.iter().map(|r| r.noise[m]).sum::<f64>() / rows.len() as f64).collect();
            for r in &mut rows {
                r.noise = pooled.clone();
            }
        }
        if rows.is_empty() {
            return Err(Error::invalid("no county has a response estimate"));
        }
        Ok(rows)
    }

    /// Kernel per output, scaled to the spread of its targets.
    fn initial_kernels(&self, rows: &[TrainingRow]) -> Vec<KernelSpec> {
        let p = self.config.response.num_coefficients();
        (0..p)
            .map(|m| {
                let t: Vec<f64> = rows.iter().map(|r| r.targets[m]).collect();
                let v = crate::stats::sample_variance(&t);
                let mut k = self.config.kernel.clone();
                let share = (v / k.components.len() as f64).max(self.config.fit.output_scale_bounds.0);
                for c in &mut k.components {
                    c.output_scale = share;
                }
                k
            })
            .collect()
    }

    fn refit(&mut self, models: GpModelSet) -> Result<GpModelSet> {
        let opts = FitOptions { seed: derive_seed(self.config.seed, "hyperparameters", self.refits), ..self.config.fit };
        self.refits += 1;
        self.updates_since_refit = 0;
        Ok(models.refit_hyperparameters(&opts)?.0)
    }

    /// Runs the initial design, fits every county's regression and the GPs,
    /// and records checkpoint 0.
    pub fn initialize(&mut self, sim: &dyn Simulator) -> Result<()> {
        if self.models.is_some() {
            return Err(Error::invalid("already initialized"));
        }
        let grid = self.config.grid.clone();
        let plan = self.config.init.clone();
        let extras = plan.extra_conditions(&grid);
        for id in plan.initial_counties(&self.counties) {
            let mut obs = self.simulate(sim, &id, TreatmentCondition::BASELINE, plan.r_base)?;
            for &c in &extras {
                obs.extend(self.simulate(sim, &id, c, plan.r_init)?);
            }
            let est = fit_response(&obs, self.config.response)?;
            self.estimates.insert(id.clone(), est);
            self.observations.insert(id, obs);
        }
        self.budget_used = self.init_cost;
        let rows = self.training_rows()?;
        let kernels = self.initial_kernels(&rows);
        let models = GpModelSet::new(self.config.response, kernels, rows, self.config.centered)?;
        self.models = Some(self.refit(models)?);
        self.push_checkpoint(0)?;
        Ok(())
    }

    /// Posterior at every county, in sorted id order, with the variance
    /// replaced per [`VarianceSource`].
    pub fn acquisition_posteriors(&self) -> Result<Vec<(String, PosteriorSummary)>> {
        let models = self.models_ref()?;
        self.sorted_ids()
            .into_iter()
            .map(|id| {
                let mut post = models.posterior(self.x_of(&id).expect("own county"))?;
                if self.config.acquisition.variance_source == VarianceSource::ObservationNoise {
                    if let Some(row) = models.row(&id) {
                        post.var = row.noise.clone();
                    }
                }
                Ok((id, post))
            })
            .collect()
    }

    pub fn next_county(&self) -> Result<String> {
        select_county(&self.acquisition_posteriors()?, &self.config.acquisition)
    }

    /// One iteration of the loop. Returns [`StepOutcome::Terminal`] without
    /// touching the state when the remaining budget cannot cover it.
    pub fn step(&mut self, sim: &dyn Simulator) -> Result<StepOutcome> {
        let models = self.models_ref()?.clone();
        let iter = self.history.len() + 1;
        let county = self.next_county()?;
        let unestimated = !self.estimates.contains_key(&county);
        let cost = if unestimated { self.config.init.cost_per_county(&self.config.grid) } else { self.config.step_cost() };
        if self.budget_used + cost > self.config.budget {
            self.terminal = true;
            return Ok(StepOutcome::Terminal);
        }

        let grid = self.config.grid.clone();
        let (condition, new_obs) = if unestimated {
            // A county outside the initial design gets the initial design first,
            // so that its regression is identifiable.
            let plan = self.config.init.clone();
            let mut obs = self.simulate(sim, &county, TreatmentCondition::BASELINE, plan.r_base)?;
            for c in plan.extra_conditions(&grid) {
                obs.extend(self.simulate(sim, &county, c, plan.r_init)?);
            }
            (TreatmentCondition::BASELINE, obs)
        } else {
            match self.config.strategy {
                Strategy::TwoStage => {
                    let acq = &self.config.acquisition;
                    let seed = derive_seed(self.config.seed.wrapping_add(acq.seed), "condition-samples", iter as u64);
                    let x = self.x_of(&county).expect("own county").to_vec();
                    let c = select_condition(&models, &x, &grid, acq, seed)?;
                    let reps = self.config.replicates_per_step;
                    (c, self.simulate(sim, &county, c, reps)?)
                }
                Strategy::OneStage => {
                    let per = self.config.replicates_per_step.div_ceil(grid.size());
                    let mut obs = Vec::with_capacity(per * grid.size());
                    for c in grid.enumerate() {
                        obs.extend(self.simulate(sim, &county, c, per)?);
                    }
                    (TreatmentCondition::BASELINE, obs)
                }
            }
        };

        let mut all = self.observations.get(&county).cloned().unwrap_or_default();
        all.extend(new_obs);
        let est = fit_response(&all, self.config.response)?;
        self.observations.insert(county.clone(), all);
        self.estimates.insert(county.clone(), est);

        let rows = self.training_rows()?;
        let mut updated = match self.config.noise {
            NoiseModel::Hetero => {
                let row = rows.into_iter().find(|r| r.county_id == county).expect("just estimated");
                models.update(vec![row])?
            }
            NoiseModel::Homo => models.with_rows(rows)?,
        };
        self.updates_since_refit += 1;
        if self.updates_since_refit >= self.config.refit_every {
            updated = self.refit(updated)?;
        }
        self.models = Some(updated);
        self.budget_used += cost;
        let cp = self.push_checkpoint(iter)?;
        let metrics = self.score(&cp)?;
        self.history.push(HistoryRecord {
            iter,
            county_id: county,
            n: condition.n,
            b: condition.b,
            replicates: cost,
            budget_used: self.budget_used,
            rel_error: metrics.map(|m| m.0),
            mse: metrics.map(|m| m.1),
        });
        Ok(StepOutcome::Advanced)
    }

    /// Steps until the budget is spent or the scalarized mean plateaus.
    pub fn run(&mut self, sim: &dyn Simulator) -> Result<StopReason> {
        if self.models.is_none() {
            self.initialize(sim)?;
        }
        loop {
            if self.step(sim)? == StepOutcome::Terminal {
                return Ok(StopReason::Budget);
            }
            if self.plateaued() {
                return Ok(StopReason::Plateau);
            }
        }
    }

    fn plateaued(&self) -> bool {
        let Some(tol) = self.config.plateau_tol else { return false };
        let w = self.config.plateau_window;
        let n = self.checkpoints.len();
        if n <= w {
            return false;
        }
        let now = self.checkpoints[n - 1].scalarized_mean;
        let then = self.checkpoints[n - 1 - w].scalarized_mean;
        (now - then).abs() / then.abs().max(1e-12) < tol
    }

    /// Refits every county's regression under `kind` on the observations
    /// collected so far, and trains fresh GPs on the result.
    pub fn fit_models_for(&self, kind: ModelKind) -> Result<GpModelSet> {
        let mut alt = self.clone();
        alt.config.response = kind;
        alt.config.acquisition.weights = None;
        alt.estimates = self
            .observations
            .iter()
            .map(|(id, obs)| Ok((id.clone(), fit_response(obs, kind)?)))
            .collect::<Result<_>>()?;
        let rows = alt.training_rows()?;
        let kernels = alt.initial_kernels(&rows);
        let models = GpModelSet::new(kind, kernels, rows, self.config.centered)?;
        let opts = FitOptions { seed: derive_seed(self.config.seed, "alternate-response", 0), ..self.config.fit };
        Ok(models.refit_hyperparameters(&opts)?.0)
    }

    /// Posterior-mean coefficients of every county under the current GPs.
    pub fn posterior_coefficients(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        let models = self.models_ref()?;
        self.counties
            .iter()
            .zip(&self.features.rows)
            .map(|(c, x)| Ok((c.county_id.clone(), models.posterior(x)?.mean)))
            .collect()
    }

    pub fn prediction_table(&self) -> Result<GridTable> {
        Ok(GridTable::from_coefficients(self.config.grid.clone(), self.config.response, &self.posterior_coefficients()?))
    }

    fn push_checkpoint(&mut self, iter: usize) -> Result<Checkpoint> {
        let coefficients = self.posterior_coefficients()?;
        let w = self.config.acquisition.weights_for(self.config.response.num_coefficients())?;
        let scalarized_mean = coefficients.values().map(|b| w.iter().zip(b).map(|(w, b)| w * b).sum::<f64>()).sum::<f64>()
            / coefficients.len() as f64;
        let cp = Checkpoint { iter, budget_used: self.budget_used, coefficients, scalarized_mean };
        self.checkpoints.push(cp.clone());
        Ok(cp)
    }

    fn score(&self, cp: &Checkpoint) -> Result<Option<(f64, f64)>> {
        let Some(truth) = &self.truth else { return Ok(None) };
        let pred = GridTable::from_coefficients(self.config.grid.clone(), self.config.response, &cp.coefficients);
        let s = error_summary(&pred, truth)?;
        Ok(Some((s.rel_error, s.mse)))
    }
}

/// Fresh models of `kind` fitted on stored observations, as
/// [`SeqDesState::fit_models_for`] would from a live state.
pub fn fit_models_on(
    config: &DesignConfig,
    counties: &[CountyFeatures],
    observations: &BTreeMap<String, Vec<Observation>>,
    kind: ModelKind,
) -> Result<GpModelSet> {
    let mut s = SeqDesState::new(config.clone(), counties.to_vec())?;
    for id in observations.keys() {
        if s.x_of(id).is_none() {
            return Err(Error::UnknownCounty(id.clone()));
        }
    }
    s.observations = observations.clone();
    s.fit_models_for(kind)
}

/// Writes the history table as CSV.
pub fn write_history_csv<W: std::io::Write>(w: W, history: &[HistoryRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iter", "county_id", "n", "b", "replicates", "budget_used", "rel_error", "mse"])?;
    for r in history {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        wtr.write_record([
            r.iter.to_string(),
            r.county_id.clone(),
            r.n.to_string(),
            r.b.to_string(),
            r.replicates.to_string(),
            r.budget_used.to_string(),
            opt(r.rel_error),
            opt(r.mse),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
