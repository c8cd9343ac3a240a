use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{error_summary, GridTable, TruthTable};
use crate::domain::{CountyFeatures, TreatmentGrid};
use crate::error::{Error, Result};
use crate::regression::ModelKind;
use crate::seqdes::{Checkpoint, DesignConfig, NoiseModel, SeqDesState, Strategy};
use crate::sim::Simulator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub iter: usize,
    pub budget_used: usize,
    pub rel_error: f64,
    pub mse: f64,
    pub per_county: BTreeMap<String, f64>,
}

/// Scores every `eval_every`-th checkpoint, and always the last one.
pub fn learning_curve(
    checkpoints: &[Checkpoint],
    grid: &TreatmentGrid,
    kind: ModelKind,
    truth: &TruthTable,
    eval_every: usize,
) -> Result<Vec<LearningCurvePoint>> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("no checkpoints to evaluate"));
    }
    let every = eval_every.max(1);
    let last = checkpoints.len() - 1;
    checkpoints
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every == 0 || *i == last)
        .map(|(_, cp)| {
            let pred = GridTable::from_coefficients(grid.clone(), kind, &cp.coefficients);
            let s = error_summary(&pred, truth)?;
            Ok(LearningCurvePoint {
                iter: cp.iter,
                budget_used: cp.budget_used,
                rel_error: s.rel_error,
                mse: s.mse,
                per_county: s.per_county,
            })
        })
        .collect()
}

pub fn state_learning_curve(state: &SeqDesState, truth: &TruthTable, eval_every: usize) -> Result<Vec<LearningCurvePoint>> {
    let cfg = state.config();
    learning_curve(state.checkpoints(), &cfg.grid, cfg.response, truth, eval_every)
}

/// Relative error of the last point whose budget does not exceed `budget`.
pub fn error_at_budget(curve: &[LearningCurvePoint], budget: usize) -> Option<f64> {
    curve.iter().take_while(|p| p.budget_used <= budget).last().map(|p| p.rel_error)
}

/// Smallest budget at which the curve is at or below `threshold`.
pub fn budget_to_reach(curve: &[LearningCurvePoint], threshold: f64) -> Option<usize> {
    curve.iter().find(|p| p.rel_error <= threshold).map(|p| p.budget_used)
}

/// Runs the design to completion with `truth` attached.
pub fn run_design(config: DesignConfig, counties: &[CountyFeatures], sim: &dyn Simulator, truth: &TruthTable) -> Result<SeqDesState> {
    let mut s = SeqDesState::new(config, counties.to_vec())?.with_truth(truth.clone())?;
    s.run(sim)?;
    Ok(s)
}

/// Same loop, but every visit simulates the whole grid of the chosen county.
pub fn run_one_stage_baseline(
    mut config: DesignConfig,
    counties: &[CountyFeatures],
    sim: &dyn Simulator,
    truth: &TruthTable,
) -> Result<SeqDesState> {
    config.strategy = Strategy::OneStage;
    run_design(config, counties, sim, truth)
}

/// Mean, min and max across seeds at each budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Band {
    fn from_runs(runs: &[Vec<f64>]) -> Self {
        let k = runs.first().map_or(0, Vec::len);
        let col = |j: usize| runs.iter().map(move |r| r[j]);
        Band {
            mean: (0..k).map(|j| col(j).sum::<f64>() / runs.len() as f64).collect(),
            min: (0..k).map(|j| col(j).fold(f64::INFINITY, f64::min)).collect(),
            max: (0..k).map(|j| col(j).fold(f64::NEG_INFINITY, f64::max)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantCurves {
    pub label: String,
    /// Per seed, relative error at each common budget.
    pub runs: Vec<Vec<f64>>,
    pub band: Band,
    /// Per seed, the full learning curve.
    pub curves: Vec<Vec<LearningCurvePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCurves {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantCurves>,
}

impl PairedCurves {
    pub fn variant(&self, label: &str) -> Option<&VariantCurves> {
        self.variants.iter().find(|v| v.label == label)
    }
}

/// Runs each labelled config under every seed and aligns the curves on a
/// common budget grid.
pub fn compare_variants(
    variants: &[(String, DesignConfig)],
    counties: &[CountyFeatures],
    sim: &dyn Simulator,
    truth: &TruthTable,
    seeds: &[u64],
) -> Result<PairedCurves> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("comparison needs at least one variant and one seed"));
    }
    let first = &variants[0].1;
    let start = first.init.total_cost(&first.grid, counties);
    let stride = variants.iter().map(|(_, c)| c.step_cost()).max().unwrap_or(1);
    let end = variants.iter().map(|(_, c)| c.budget).min().unwrap_or(start);
    let budgets: Vec<usize> = (start..=end).step_by(stride).collect();
    let mut out = Vec::new();
    for (label, cfg) in variants {
        let mut runs = Vec::new();
        let mut curves = Vec::new();
        for &seed in seeds {
            let c = DesignConfig { seed, ..cfg.clone() };
            let s = run_design(c, counties, sim, truth)?;
            let curve = state_learning_curve(&s, truth, 1)?;
            runs.push(budgets.iter().map(|&b| error_at_budget(&curve, b).unwrap_or(f64::NAN)).collect());
            curves.push(curve);
        }
        out.push(VariantCurves { label: label.clone(), band: Band::from_runs(&runs), runs, curves });
    }
    Ok(PairedCurves { budgets, seeds: seeds.to_vec(), variants: out })
}

/// Heteroscedastic versus pooled noise, otherwise identical runs.
pub fn compare_noise_models(
    base: &DesignConfig,
    counties: &[CountyFeatures],
    sim: &dyn Simulator,
    truth: &TruthTable,
    seeds: &[u64],
) -> Result<PairedCurves> {
    let v = vec![
        ("hetero".to_string(), DesignConfig { noise: NoiseModel::Hetero, ..base.clone() }),
        ("homo".to_string(), DesignConfig { noise: NoiseModel::Homo, ..base.clone() }),
    ];
    compare_variants(&v, counties, sim, truth, seeds)
}

/// Two-stage versus one-stage, otherwise identical runs.
pub fn compare_strategies(
    base: &DesignConfig,
    counties: &[CountyFeatures],
    sim: &dyn Simulator,
    truth: &TruthTable,
    seeds: &[u64],
) -> Result<PairedCurves> {
    let v = vec![
        ("two-stage".to_string(), DesignConfig { strategy: Strategy::TwoStage, ..base.clone() }),
        ("one-stage".to_string(), DesignConfig { strategy: Strategy::OneStage, ..base.clone() }),
    ];
    compare_variants(&v, counties, sim, truth, seeds)
}
