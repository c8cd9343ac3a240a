use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{sample_independent, GpModelSet};
use crate::regression::ModelKind;
use crate::rng::derive_seed;
use crate::stats::{central_interval, quantile_sorted, sample_variance};

/// Difference of one coefficient between the interaction and main-effects fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMu {
    pub county_id: String,
    pub coefficient: String,
    pub main_mean: f64,
    pub interaction_mean: f64,
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl DeltaMu {
    pub fn spans_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }
}

/// Distribution of the posterior-mean interaction coefficient across counties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSummary {
    pub mean: f64,
    pub sd: f64,
    pub p10: f64,
    pub p90: f64,
    pub mean_abs: f64,
    /// Mean over counties of `(|mu_n| + |mu_b|) / 2` in the interaction fit.
    pub mean_abs_main: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecComparison {
    pub rows: Vec<DeltaMu>,
    /// Present when the second fit has an interaction term.
    pub interaction: Option<InteractionSummary>,
}

impl SpecComparison {
    pub fn fraction_spanning_zero(&self) -> f64 {
        self.rows.iter().filter(|r| r.spans_zero()).count() as f64 / self.rows.len() as f64
    }
}

/// Compares the shared coefficients `mu_0, mu_n, mu_b` of two fits at each
/// county, `delta = interaction - main`. Intervals are empirical 95%
/// quantiles of the difference of independent posterior draws.
pub fn compare_specifications(
    main: &GpModelSet,
    interaction: &GpModelSet,
    counties: &[(String, Vec<f64>)],
    samples: usize,
    seed: u64,
) -> Result<SpecComparison> {
    if counties.is_empty() {
        return Err(Error::invalid("no counties to compare"));
    }
    let names = ModelKind::MainEffects.coefficient_names();
    let mut rows = Vec::new();
    let mut nb = Vec::new();
    let mut main_abs = Vec::new();
    for (i, (id, x)) in counties.iter().enumerate() {
        let pm = main.posterior(x)?;
        let pi = interaction.posterior(x)?;
        let dm = sample_independent(&pm, samples, derive_seed(seed, "delta-main", i as u64));
        let di = sample_independent(&pi, samples, derive_seed(seed, "delta-interaction", i as u64));
        for (m, name) in names.iter().enumerate() {
            let mut d: Vec<f64> = dm.iter().zip(&di).map(|(a, b)| b[m] - a[m]).collect();
            let (lo, hi) = central_interval(&mut d, 0.95);
            rows.push(DeltaMu {
                county_id: id.clone(),
                coefficient: (*name).to_string(),
                main_mean: pm.mean[m],
                interaction_mean: pi.mean[m],
                delta: pi.mean[m] - pm.mean[m],
                lo,
                hi,
            });
        }
        if interaction.kind() == ModelKind::Interaction {
            nb.push(pi.mean[3]);
            main_abs.push((pi.mean[1].abs() + pi.mean[2].abs()) / 2.0);
        }
    }
    if nb.is_empty() {
        return Ok(SpecComparison { rows, interaction: None });
    }
    let mut sorted = nb.clone();
    sorted.sort_by(f64::total_cmp);
    let k = nb.len() as f64;
    let interaction = Some(InteractionSummary {
        mean: nb.iter().sum::<f64>() / k,
        sd: sample_variance(&nb).sqrt(),
        p10: quantile_sorted(&sorted, 0.1),
        p90: quantile_sorted(&sorted, 0.9),
        mean_abs: nb.iter().map(|v| v.abs()).sum::<f64>() / k,
        mean_abs_main: main_abs.iter().sum::<f64>() / k,
    });
    Ok(SpecComparison { rows, interaction })
}

/// Every county's `(id, standardized features)` from a model set's own
/// training rows.
pub fn training_inputs(models: &GpModelSet) -> Vec<(String, Vec<f64>)> {
    models.rows().iter().map(|r| (r.county_id.clone(), r.x.clone())).collect()
}
