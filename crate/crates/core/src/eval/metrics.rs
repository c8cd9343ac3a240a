use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{TreatmentCondition, TreatmentGrid};
use crate::error::{Error, Result};
use crate::regression::{predict_response, ModelKind};
use crate::rng::derive_seed;
use crate::sim::{run_batch, Simulator};

/// One value per (county, grid condition), stored row-major per county in
/// [`TreatmentGrid::conditions`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTable {
    pub grid: TreatmentGrid,
    pub values: BTreeMap<String, Vec<f64>>,
}

/// Reference outcomes the surrogate is scored against.
pub type TruthTable = GridTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthSource {
    /// Exact expectation from the simulator.
    #[default]
    Analytic,
    /// Mean over held-out replicates.
    Holdout,
}

impl GridTable {
    pub fn new(grid: TreatmentGrid) -> Self {
        GridTable { grid, values: BTreeMap::new() }
    }

    pub fn insert(&mut self, county_id: impl Into<String>, row: Vec<f64>) -> Result<()> {
        if row.len() != self.grid.size() {
            return Err(Error::DimensionMismatch { expected: self.grid.size(), got: row.len() });
        }
        self.values.insert(county_id.into(), row);
        Ok(())
    }

    pub fn get(&self, county_id: &str, c: TreatmentCondition) -> Option<f64> {
        let i = self.grid.index_of(c)?;
        self.values.get(county_id).map(|r| r[i])
    }

    pub fn counties(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Evaluates response coefficients over the full grid.
    pub fn from_coefficients(grid: TreatmentGrid, kind: ModelKind, coefficients: &BTreeMap<String, Vec<f64>>) -> Self {
        let values = coefficients
            .iter()
            .map(|(id, beta)| (id.clone(), grid.conditions().map(|c| predict_response(kind, beta, None, c).mean).collect()))
            .collect();
        GridTable { grid, values }
    }

    /// Truth for `counties` from the simulator: exact expectations, or the mean
    /// of `holdout_replicates` runs on a seed stream disjoint from training.
    pub fn from_simulator<S: Simulator + ?Sized>(
        sim: &S,
        grid: TreatmentGrid,
        counties: &[String],
        source: TruthSource,
        holdout_replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        let rows = counties
            .par_iter()
            .enumerate()
            .map(|(ci, id)| {
                let row = grid
                    .enumerate()
                    .into_iter()
                    .enumerate()
                    .map(|(k, c)| match source {
                        TruthSource::Analytic => sim.expected(id, c),
                        TruthSource::Holdout => {
                            let s = derive_seed(seed, "holdout", (ci * grid.size() + k) as u64);
                            let obs = run_batch(sim, id, c, s, holdout_replicates)?;
                            Ok(obs.iter().map(|o| o.outcome).sum::<f64>() / obs.len() as f64)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((id.clone(), row))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GridTable { grid, values: rows.into_iter().collect() })
    }
}

/// Error of a prediction table against truth, averaged over cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    /// Mean of `|pred - truth| / truth` over cells with nonzero truth.
    pub rel_error: f64,
    pub mse: f64,
    /// Cells left out of the relative error because truth was 0.
    pub excluded_cells: usize,
    /// Mean relative error per county.
    pub per_county: BTreeMap<String, f64>,
}

fn paired_cells<'a>(pred: &'a GridTable, truth: &'a GridTable) -> Result<Vec<(&'a str, &'a [f64], &'a [f64])>> {
    if pred.grid != truth.grid {
        return Err(Error::invalid("prediction and truth grids differ"));
    }
    truth
        .values
        .iter()
        .map(|(id, t)| {
            let p = pred.values.get(id).ok_or_else(|| Error::UnknownCounty(id.clone()))?;
            Ok((id.as_str(), p.as_slice(), t.as_slice()))
        })
        .collect()
}

/// Mean absolute relative error over every (county, condition) in `truth`.
pub fn relative_error(pred: &GridTable, truth: &TruthTable) -> Result<f64> {
    Ok(error_summary(pred, truth)?.rel_error)
}

pub fn mse(pred: &GridTable, truth: &TruthTable) -> Result<f64> {
    Ok(error_summary(pred, truth)?.mse)
}

pub fn error_summary(pred: &GridTable, truth: &TruthTable) -> Result<ErrorSummary> {
    let cells = paired_cells(pred, truth)?;
    let mut rel_sum = 0.0;
    let mut rel_n = 0usize;
    let mut sq_sum = 0.0;
    let mut sq_n = 0usize;
    let mut excluded = 0usize;
    let mut per_county = BTreeMap::new();
    for (id, p, t) in cells {
        let mut c_sum = 0.0;
        let mut c_n = 0usize;
        for (p, t) in p.iter().zip(t) {
            sq_sum += (p - t).powi(2);
            sq_n += 1;
            if *t == 0.0 {
                excluded += 1;
                continue;
            }
            let r = (p - t).abs() / t.abs();
            rel_sum += r;
            rel_n += 1;
            c_sum += r;
            c_n += 1;
        }
        if c_n > 0 {
            per_county.insert(id.to_owned(), c_sum / c_n as f64);
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} cells with zero truth excluded from relative error");
    }
    if sq_n == 0 {
        return Err(Error::invalid("truth table is empty"));
    }
    Ok(ErrorSummary {
        rel_error: if rel_n > 0 { rel_sum / rel_n as f64 } else { f64::NAN },
        mse: sq_sum / sq_n as f64,
        excluded_cells: excluded,
        per_county,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(v: f64) -> GridTable {
        let grid = TreatmentGrid::new(2, 2).unwrap();
        let mut t = GridTable::new(grid);
        t.insert("a", vec![v, 50.0, 50.0, 50.0]).unwrap();
        t
    }

    #[test]
    fn exact_prediction_has_zero_error() {
        let t = one_cell(100.0);
        let s = error_summary(&t, &t).unwrap();
        assert_eq!((s.rel_error, s.mse), (0.0, 0.0));
    }

    #[test]
    fn single_cell_arithmetic() {
        let grid = TreatmentGrid::new(2, 2).unwrap();
        let mut p = GridTable::new(grid);
        p.insert("a", vec![105.0, 50.0, 50.0, 50.0]).unwrap();
        let s = error_summary(&p, &one_cell(100.0)).unwrap();
        assert!((s.rel_error - 0.05 / 4.0).abs() < 1e-15);
        assert!((s.mse - 25.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_cells_are_counted_and_skipped() {
        let p = one_cell(3.0);
        let s = error_summary(&p, &one_cell(0.0)).unwrap();
        assert_eq!(s.excluded_cells, 1);
        assert_eq!(s.rel_error, 0.0);
        assert!((s.mse - 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn missing_county_is_an_error() {
        let grid = TreatmentGrid::new(2, 2).unwrap();
        let empty = GridTable::new(grid);
        assert!(matches!(error_summary(&empty, &one_cell(1.0)), Err(Error::UnknownCounty(_))));
    }
}
