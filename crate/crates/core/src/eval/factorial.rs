use serde::{Deserialize, Serialize};

use super::metrics::GridTable;
use crate::domain::TreatmentCondition;
use crate::error::{Error, Result};

/// One county's outcome surface with its additivity diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialSlices {
    pub county_id: String,
    /// `outcome[n][b]`.
    pub outcome: Vec<Vec<f64>>,
    /// Largest `|z(n+1,b+1) - z(n+1,b) - z(n,b+1) + z(n,b)|` over the grid.
    pub max_defect: f64,
    /// Mean absolute first difference along either axis.
    pub mean_step: f64,
}

impl FactorialSlices {
    /// Outcome against `b` at fixed `n`.
    pub fn slice_at_n(&self, n: usize) -> &[f64] {
        &self.outcome[n]
    }

    /// Outcome against `n` at fixed `b`.
    pub fn slice_at_b(&self, b: usize) -> Vec<f64> {
        self.outcome.iter().map(|row| row[b]).collect()
    }

    pub fn defect_ratio(&self) -> f64 {
        if self.mean_step == 0.0 {
            if self.max_defect == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            self.max_defect / self.mean_step
        }
    }
}

pub fn factorial_slices(table: &GridTable, county_id: &str) -> Result<FactorialSlices> {
    let row = table.values.get(county_id).ok_or_else(|| Error::UnknownCounty(county_id.to_owned()))?;
    let grid = &table.grid;
    let (ln, lb) = (grid.levels_n() as usize, grid.levels_b() as usize);
    let at = |n: usize, b: usize| row[grid.index_of(TreatmentCondition::new(n as u32, b as u32)).expect("in grid")];
    let outcome: Vec<Vec<f64>> = (0..ln).map(|n| (0..lb).map(|b| at(n, b)).collect()).collect();
    let mut max_defect = 0.0f64;
    for n in 0..ln - 1 {
        for b in 0..lb - 1 {
            let d = outcome[n + 1][b + 1] - outcome[n + 1][b] - outcome[n][b + 1] + outcome[n][b];
            max_defect = max_defect.max(d.abs());
        }
    }
    let mut steps = Vec::new();
    for n in 0..ln {
        for b in 0..lb {
            if n + 1 < ln {
                steps.push((outcome[n + 1][b] - outcome[n][b]).abs());
            }
            if b + 1 < lb {
                steps.push((outcome[n][b + 1] - outcome[n][b]).abs());
            }
        }
    }
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    Ok(FactorialSlices { county_id: county_id.to_owned(), outcome, max_defect, mean_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TreatmentGrid;
    use crate::sim::LinearCoefficients;

    fn table(c: &LinearCoefficients) -> GridTable {
        let grid = TreatmentGrid::default();
        let mut t = GridTable::new(grid.clone());
        t.insert("x", grid.conditions().map(|k| c.mean(k)).collect()).unwrap();
        t
    }

    #[test]
    fn additive_truth_has_no_defect() {
        let s = factorial_slices(&table(&LinearCoefficients::new(90.0, -4.0, -5.0)), "x").unwrap();
        assert!(s.max_defect < 1e-12);
        assert_eq!(s.slice_at_b(0), vec![90.0, 86.0, 82.0, 78.0, 74.0]);
        assert_eq!(s.slice_at_n(0)[1], 85.0);
    }

    #[test]
    fn unit_interaction_gives_unit_defect() {
        let mut c = LinearCoefficients::new(90.0, -4.0, -5.0);
        c.mu_nb = 1.0;
        let s = factorial_slices(&table(&c), "x").unwrap();
        assert!((s.max_defect - 1.0).abs() < 1e-12);
    }
}
